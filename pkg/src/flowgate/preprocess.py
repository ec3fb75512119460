"""Feature scaling and assembly of model-ready tensors.

Packet sizes and inter-arrival times are z-scored; flow statistics are
clipped at their fitted 0.95 quantile and robust-scaled (median / IQR).
Directions and TCP flags pass through untouched. The packet sequence
becomes a 3x30 tensor (size, direction, IAT channels) padded with zeros
after scaling so the pad value is exactly 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .core import MAX_PSTATS_LEN, FlowRecord

IAT_CLIP_MS = (1.0, 15000.0)
FLOWSTATS_CLIP_QUANTILE = 0.95

# Scaled numeric flow statistics, in vector order; six raw flags follow.
FLOWSTATS_NUMERIC = (
    "bytes_fwd", "bytes_rev", "packets_fwd", "packets_rev",
    "duration_s", "ppi_duration_s", "roundtrips",
)
FLOWSTATS_DIM = len(FLOWSTATS_NUMERIC) + 6


class UnfittedScalerError(RuntimeError):
    pass


@dataclass
class AblationConfig:
    """Input-channel and preprocessing switches for ablation runs."""

    use_flowstats: bool = True
    use_iat: bool = True
    use_dirs: bool = True
    pstats_limit: int = MAX_PSTATS_LEN
    standardize: bool = True
    clip: bool = True


@dataclass
class StandardParams:
    mean: float = 0.0
    stdev: float = 1.0
    constant: bool = False


@dataclass
class RobustParams:
    median: float = 0.0
    iqr: float = 1.0
    clip_ceiling: float = float("inf")


@dataclass
class ScalerParams:
    """Fitted scaling parameters; serializes into the model bundle."""

    size: StandardParams = field(default_factory=StandardParams)
    iat: StandardParams = field(default_factory=StandardParams)
    flowstats: dict[str, RobustParams] = field(default_factory=dict)
    fitted_on: str = ""
    fitted: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScalerParams":
        return cls(
            size=StandardParams(**data["size"]),
            iat=StandardParams(**data["iat"]),
            flowstats={k: RobustParams(**v) for k, v in data["flowstats"].items()},
            fitted_on=data.get("fitted_on", ""),
            fitted=data["fitted"],
        )


@dataclass
class FeatureVector:
    """Model-ready tensors for one flow."""

    pstats_tensor: np.ndarray  # (3, 30): size, dir, iat channels
    pstats_len: int
    flowstats_vector: np.ndarray  # (13,)
    ablated: bool = False


def _standard_fit(values: np.ndarray) -> StandardParams:
    if values.size == 0:
        return StandardParams(constant=True)
    mean = float(np.mean(values))
    stdev = float(np.std(values))
    if stdev == 0.0:
        return StandardParams(mean=mean, stdev=1.0, constant=True)
    return StandardParams(mean=mean, stdev=stdev)


def fit_scalers(records: list[FlowRecord], ablation: AblationConfig | None = None,
                fitted_on: str = "") -> ScalerParams:
    """Fit scaling parameters on training flows only.

    Size and IAT statistics pool all real (non-padded) packet positions;
    IATs are clipped to [1, 15000] ms first. Each numeric flow statistic
    is clipped at its own 0.95 quantile before the median/IQR fit.
    """
    if len(records) < 2:
        raise ValueError("need at least 2 training flows to fit scalers")
    ablation = ablation or AblationConfig()

    sizes = np.concatenate([np.asarray(r.pstats.sizes, dtype=float)
                            for r in records if len(r.pstats)] or [np.empty(0)])
    iats = np.concatenate([np.asarray(r.pstats.iats, dtype=float)
                           for r in records if len(r.pstats)] or [np.empty(0)])
    if ablation.clip:
        iats = np.clip(iats, *IAT_CLIP_MS)

    flow_params: dict[str, RobustParams] = {}
    for name in FLOWSTATS_NUMERIC:
        values = np.asarray([getattr(r.stats, name) for r in records], dtype=float)
        ceiling = float(np.quantile(values, FLOWSTATS_CLIP_QUANTILE))
        if ablation.clip:
            values = np.minimum(values, ceiling)
        median = float(np.median(values))
        q75, q25 = np.quantile(values, [0.75, 0.25])
        iqr = float(q75 - q25)
        if iqr == 0.0:
            iqr = 1.0
        flow_params[name] = RobustParams(median=median, iqr=iqr, clip_ceiling=ceiling)

    return ScalerParams(
        size=_standard_fit(sizes),
        iat=_standard_fit(iats),
        flowstats=flow_params,
        fitted_on=fitted_on,
        fitted=True,
    )


def _scale_standard(values: np.ndarray, params: StandardParams,
                    standardize: bool) -> np.ndarray:
    if not standardize:
        return values
    if params.constant:
        return np.zeros_like(values)
    return (values - params.mean) / params.stdev


def transform(record: FlowRecord, params: ScalerParams,
              ablation: AblationConfig | None = None) -> FeatureVector:
    """Turn one flow into model-ready tensors using fitted parameters."""
    if not params.fitted:
        raise UnfittedScalerError("scaler parameters are not fitted")
    ablation = ablation or AblationConfig()

    length = min(len(record.pstats), ablation.pstats_limit)
    tensor = np.zeros((3, MAX_PSTATS_LEN))
    if length:
        sizes = np.asarray(record.pstats.sizes[:length], dtype=float)
        dirs = np.asarray(record.pstats.dirs[:length], dtype=float)
        iats = np.asarray(record.pstats.iats[:length], dtype=float)
        if ablation.clip:
            iats = np.clip(iats, *IAT_CLIP_MS)
        tensor[0, :length] = _scale_standard(sizes, params.size, ablation.standardize)
        if ablation.use_dirs:
            tensor[1, :length] = dirs
        if ablation.use_iat:
            tensor[2, :length] = _scale_standard(iats, params.iat, ablation.standardize)

    flowstats = np.zeros(FLOWSTATS_DIM)
    if ablation.use_flowstats:
        for i, name in enumerate(FLOWSTATS_NUMERIC):
            value = float(getattr(record.stats, name))
            fp = params.flowstats[name]
            if ablation.clip:
                value = min(value, fp.clip_ceiling)
            if ablation.standardize:
                value = (value - fp.median) / fp.iqr
            flowstats[i] = value
        flowstats[len(FLOWSTATS_NUMERIC):] = record.stats.flags()

    ablated = ablation != AblationConfig()
    return FeatureVector(
        pstats_tensor=tensor,
        pstats_len=length,
        flowstats_vector=flowstats,
        ablated=ablated,
    )


def transform_batch(records: list[FlowRecord], params: ScalerParams,
                    ablation: AblationConfig | None = None
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Stack transforms into (N, 3, 30) and (N, 13) arrays."""
    features = [transform(r, params, ablation) for r in records]
    pstats = np.stack([f.pstats_tensor for f in features]) if features else \
        np.zeros((0, 3, MAX_PSTATS_LEN))
    flowstats = np.stack([f.flowstats_vector for f in features]) if features else \
        np.zeros((0, FLOWSTATS_DIM))
    return pstats, flowstats
