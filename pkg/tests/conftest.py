"""Shared test helpers: flow builders and finite-difference oracles."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from flowgate.core import FlowRecord, PacketSeq, derive_flowstats


def make_flow(sizes, dirs, iats, label=None, sni=None, window_ts=0,
              duration_s=None, flags=(0, 0, 0, 0, 0, 0)) -> FlowRecord:
    """Build a FlowRecord whose stats are derived from its packets."""
    ps = PacketSeq(sizes=tuple(sizes), dirs=tuple(dirs), iats=tuple(iats))
    stats = derive_flowstats(ps, 0.0, flags)
    if duration_s is None:
        duration_s = stats.ppi_duration_s
    stats = replace(stats, duration_s=duration_s)
    return FlowRecord(pstats=ps, stats=stats, sni=sni, label=label,
                      window_ts=window_ts)


def random_flow(rng: np.random.Generator, label: str | None = None,
                length: int | None = None, window_ts: int = 0) -> FlowRecord:
    """A random but always-valid bidirectional flow."""
    if length is None:
        length = int(rng.integers(3, 31))
    sizes = rng.integers(1, 1461, size=length)
    dirs = np.where(rng.random(length) < 0.5, 1, -1)
    dirs[0], dirs[1] = 1, -1
    iats = np.round(rng.uniform(0.0, 500.0, size=length), 3)
    iats[0] = 0.0
    flags = tuple(int(b) for b in rng.integers(0, 2, size=6))
    return make_flow(sizes, dirs, iats, label=label, window_ts=window_ts,
                     flags=flags)


def numeric_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f() with respect to array x,
    mutating x in place around each evaluation."""
    grad = np.zeros_like(x, dtype=float)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        f_plus = f()
        x[idx] = orig - h
        f_minus = f()
        x[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max |a - n| scaled by the largest magnitude in either array."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)
