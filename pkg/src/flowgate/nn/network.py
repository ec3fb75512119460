"""Multimodal network: a conv chain for packet sequences and a linear
chain for flow statistics, concatenated into a shared trunk.

Layer topology is data (NetTopology) so it can be serialized next to
the parameters. The forward pass caches the penultimate activation
(input of the final classification layer) for the gradient-based
novelty score.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .layers import BatchNorm, Conv1d, Dropout, Flatten, Layer, Linear, ReLU


@dataclass
class ConvSpec:
    filters: int
    kernel: int
    stride: int = 1
    padding: str = "same"


@dataclass
class NetTopology:
    """Layer sizes for both modality chains and the shared trunk."""

    num_classes: int
    pstats_channels: int = 3
    pstats_len: int = 30
    flowstats_dim: int = 13
    conv_specs: list[ConvSpec] = field(default_factory=lambda: [
        ConvSpec(64, 7, 1), ConvSpec(128, 5, 2), ConvSpec(256, 3, 2)])
    pstats_linear: int = 256
    flowstats_linear: list[int] = field(default_factory=lambda: [64, 64])
    trunk_linear: list[int] = field(default_factory=lambda: [512, 256])
    dropout: float = 0.2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "NetTopology":
        data = dict(data)
        data["conv_specs"] = [ConvSpec(**c) for c in data["conv_specs"]]
        return cls(**data)


def desk_topology(num_classes: int) -> NetTopology:
    """Small profile for desk-scale experiments (widths cut ~4x)."""
    return NetTopology(
        num_classes=num_classes,
        conv_specs=[ConvSpec(16, 7), ConvSpec(32, 5), ConvSpec(32, 3)],
        pstats_linear=64,
        flowstats_linear=[16, 16],
        trunk_linear=[96, 64],
    )


class Network:
    """Executable network built from a NetTopology."""

    def __init__(self, topology: NetTopology) -> None:
        if topology.num_classes < 2:
            raise ValueError("need at least 2 output classes")
        self.topology = topology
        t = topology

        self.pstats_chain: list[Layer] = []
        in_ch = t.pstats_channels
        length = t.pstats_len
        for spec in t.conv_specs:
            if spec.padding != "same":
                raise ValueError("only 'same' conv padding is supported")
            self.pstats_chain += [
                Conv1d(in_ch, spec.filters, spec.kernel, spec.stride),
                BatchNorm(spec.filters),
                ReLU(),
            ]
            in_ch = spec.filters
            length = -(-length // spec.stride)
        self.pstats_chain += [
            Flatten(),
            Linear(in_ch * length, t.pstats_linear),
            ReLU(),
        ]

        self.flowstats_chain: list[Layer] = []
        in_f = t.flowstats_dim
        for width in t.flowstats_linear:
            self.flowstats_chain += [Linear(in_f, width), BatchNorm(width), ReLU()]
            in_f = width

        self.trunk: list[Layer] = []
        in_t = t.pstats_linear + in_f
        for i, width in enumerate(t.trunk_linear):
            self.trunk += [Linear(in_t, width), ReLU()]
            if i == 0 and t.dropout > 0:
                self.trunk.append(Dropout(t.dropout))
            in_t = width
        self.final = Linear(in_t, t.num_classes)

        self.penultimate: np.ndarray | None = None

    # -- structure ---------------------------------------------------------

    def layers(self) -> list[Layer]:
        return self.pstats_chain + self.flowstats_chain + self.trunk + [self.final]

    def init_params(self, rng: np.random.Generator) -> None:
        for layer in self.layers():
            layer.init_params(rng)

    def param_arrays(self) -> list[np.ndarray]:
        """Trainable tensors in documented serialization order."""
        out: list[np.ndarray] = []
        for layer in self.layers():
            out.extend(layer.params.values())
        return out

    def grad_arrays(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for layer in self.layers():
            out.extend(layer.grads[name] for name in layer.params)
        return out

    def state_arrays(self) -> list[np.ndarray]:
        """All tensors needed to restore the network, params then norms."""
        out: list[np.ndarray] = []
        for layer in self.layers():
            out.extend(arr for _, arr in layer.state_arrays())
        return out

    def load_state_arrays(self, arrays: list[np.ndarray]) -> None:
        arrays = list(arrays)
        for layer in self.layers():
            n = len(layer.state_arrays())
            layer.load_state_arrays(arrays[:n])
            arrays = arrays[n:]
        if arrays:
            raise ValueError("trailing arrays while loading network state")

    def snapshot(self) -> list[np.ndarray]:
        return [a.copy() for a in self.state_arrays()]

    # -- execution ---------------------------------------------------------

    def forward(self, pstats: np.ndarray, flowstats: np.ndarray,
                train: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        if pstats.shape[0] != flowstats.shape[0]:
            raise ValueError("pstats and flowstats batch sizes differ")
        a = pstats
        for layer in self.pstats_chain:
            a = layer.forward(a, train, rng)
        b = flowstats
        for layer in self.flowstats_chain:
            b = layer.forward(b, train, rng)
        self._split = a.shape[1]
        h = np.concatenate([a, b], axis=1)
        for layer in self.trunk:
            h = layer.forward(h, train, rng)
        self.penultimate = h
        return self.final.forward(h, train, rng)

    def backward(self, dlogits: np.ndarray) -> None:
        dh = self.final.backward(dlogits)
        for layer in reversed(self.trunk):
            dh = layer.backward(dh)
        da, db = dh[:, :self._split], dh[:, self._split:]
        for layer in reversed(self.pstats_chain):
            da = layer.backward(da)
        for layer in reversed(self.flowstats_chain):
            db = layer.backward(db)


def param_count(topology: NetTopology) -> int:
    """Number of trainable parameters (weights, biases, norm affines)."""
    return sum(layer.trainable_count() for layer in Network(topology).layers())
