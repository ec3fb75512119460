"""Trained-model bundle: network weights plus everything needed to
reproduce its inputs (fitted scalers, taxonomy snapshot, class order).

On disk a bundle is one directory:
  topology.json  layer topology
  params.bin     little-endian float64, all network tensors concatenated
                 in layer order (weights, biases, norm affines, then the
                 running statistics of each layer as declared)
  scalers.json   fitted scaling parameters
  taxonomy.csv   service/group/pattern snapshot
  meta.json      seed, temperature, class order, training config,
                 ablation switches, and calibration once performed
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, asdict, replace

import numpy as np

from ..core import ServiceTaxonomy
from ..ingest import read_taxonomy, write_taxonomy
from ..preprocess import AblationConfig, ScalerParams
from .network import NetTopology, Network
from .training import TrainConfig


@dataclass
class Model:
    network: Network
    scalers: ScalerParams
    taxonomy: ServiceTaxonomy
    classes: list[str]  # output order of the final layer
    temperature: float
    train_config: TrainConfig
    ablation: AblationConfig
    calibration: dict | None = None

    @property
    def topology(self) -> NetTopology:
        return self.network.topology

    def class_index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.classes)}


def save_model(model: Model, out_dir: str | os.PathLike) -> None:
    os.makedirs(out_dir, exist_ok=True)
    out = str(out_dir)
    with open(os.path.join(out, "topology.json"), "w") as fh:
        json.dump(model.topology.to_dict(), fh, indent=2, sort_keys=True)
    arrays = model.network.state_arrays()
    flat = np.concatenate([a.ravel() for a in arrays]).astype("<f8")
    flat.tofile(os.path.join(out, "params.bin"))
    with open(os.path.join(out, "scalers.json"), "w") as fh:
        json.dump(model.scalers.to_dict(), fh, indent=2, sort_keys=True)
    write_taxonomy(os.path.join(out, "taxonomy.csv"), model.taxonomy)
    meta = {
        "seed": model.train_config.seed,
        "temperature": model.temperature,
        "classes": model.classes,
        "train_config": model.train_config.to_dict(),
        "ablation": asdict(model.ablation),
        "calibration": model.calibration,
    }
    with open(os.path.join(out, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_model(bundle_dir: str | os.PathLike) -> Model:
    path = str(bundle_dir)
    with open(os.path.join(path, "topology.json")) as fh:
        topology = NetTopology.from_dict(json.load(fh))
    network = Network(topology)
    flat = np.fromfile(os.path.join(path, "params.bin"), dtype="<f8")
    templates = network.state_arrays()
    if flat.size != sum(t.size for t in templates):
        raise ValueError("params.bin size does not match the topology")
    arrays = []
    offset = 0
    for template in templates:
        arrays.append(flat[offset:offset + template.size].reshape(template.shape))
        offset += template.size
    network.load_state_arrays(arrays)
    with open(os.path.join(path, "scalers.json")) as fh:
        scalers = ScalerParams.from_dict(json.load(fh))
    taxonomy = read_taxonomy(os.path.join(path, "taxonomy.csv"))
    with open(os.path.join(path, "meta.json")) as fh:
        meta = json.load(fh)
    return Model(
        network=network,
        scalers=scalers,
        taxonomy=taxonomy,
        classes=list(meta["classes"]),
        temperature=float(meta["temperature"]),
        train_config=TrainConfig(**meta["train_config"]),
        ablation=AblationConfig(**meta["ablation"]),
        calibration=meta["calibration"],
    )


def save_calibration(model: Model, bundle_dir: str | os.PathLike,
                     calibration: dict) -> Model:
    """Append calibration results to an existing bundle's meta.json."""
    meta_path = os.path.join(str(bundle_dir), "meta.json")
    with open(meta_path) as fh:
        meta = json.load(fh)
    meta["calibration"] = calibration
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return replace(model, calibration=calibration)
