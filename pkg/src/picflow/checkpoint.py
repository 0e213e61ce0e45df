"""Model checkpoints: parameters + normalizer + hyperparameters + rng seed.

A checkpoint is a directory holding one portable array per tensor and a
JSON manifest (name, shape, role per tensor). Optimizer moments are stored
too so interrupted training can resume.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import parr
from .autodiff import AdamState, Tensor
from .model import Normalizer, Picrnn
from .reservoir import Grid

FORMAT = "picflow-checkpoint-1"


class CheckpointError(ValueError):
    pass


def _role(name: str) -> str:
    prefix = name.split(".")[0].rstrip("0123456789")
    return {"enc": "state-encoder", "ctrl": "control-encoder",
            "lstm": "convlstm", "dec": "decoder", "out": "output-scaling"
            }.get(prefix, "unknown")


def save(directory, surrogate: Picrnn, adam: AdamState | None = None,
         epoch: int | None = None) -> None:
    os.makedirs(directory, exist_ok=True)
    entries = []
    for name, p in surrogate.params.items():
        file_name = f"{name}.parr"
        parr.write_array(os.path.join(directory, file_name), p.data)
        entries.append({"name": name, "shape": list(p.shape),
                        "role": _role(name), "file": file_name})
    manifest = {
        "format": FORMAT,
        "seed": surrogate.seed,
        "epoch": epoch,
        "grid": {"nx": surrogate.grid.nx, "ny": surrogate.grid.ny,
                 "dx": surrogate.grid.dx, "dy": surrogate.grid.dy,
                 "dz": surrogate.grid.dz},
        "well_cells": list(surrogate.well_cells),
        "normalizer": {"p_ref": surrogate.normalizer.p_ref,
                       "p_scale": surrogate.normalizer.p_scale},
        "params": entries,
        "adam": None,
    }
    if adam is not None:
        manifest["adam"] = {"beta1": adam.beta1, "beta2": adam.beta2,
                            "eps": adam.eps, "step_count": adam.step_count}
        for tag, buffers in (("m", adam.m), ("v", adam.v)):
            sub = os.path.join(directory, f"adam_{tag}")
            os.makedirs(sub, exist_ok=True)
            for name, buf in buffers.items():
                parr.write_array(os.path.join(sub, f"{name}.parr"), buf)
    payload = json.dumps(manifest, indent=2, sort_keys=True)
    tmp = os.path.join(directory, "manifest.json.tmp")
    with open(tmp, "w") as fh:
        fh.write(payload)
    os.replace(tmp, os.path.join(directory, "manifest.json"))


def load(directory) -> tuple[Picrnn, AdamState | None, dict]:
    manifest_path = os.path.join(directory, "manifest.json")
    if not os.path.exists(manifest_path):
        raise CheckpointError(f"no manifest at {manifest_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"unsupported checkpoint format "
                              f"{manifest.get('format')!r}")
    params: dict[str, Tensor] = {}
    for entry in manifest["params"]:
        data = parr.read_array(os.path.join(directory, entry["file"]))
        if list(data.shape) != entry["shape"]:
            raise CheckpointError(
                f"{entry['name']}: shape {list(data.shape)} does not match "
                f"manifest {entry['shape']}")
        params[entry["name"]] = Tensor(data, requires_grad=True)
    g = manifest["grid"]
    grid = Grid(nx=g["nx"], ny=g["ny"], dx=g["dx"], dy=g["dy"], dz=g["dz"])
    nm = Normalizer(manifest["normalizer"]["p_ref"],
                    manifest["normalizer"]["p_scale"])
    surrogate = Picrnn(grid, manifest["well_cells"], nm,
                       seed=manifest.get("seed", 0), params=params)
    adam = None
    if manifest.get("adam"):
        meta = manifest["adam"]
        adam = AdamState(params, beta1=meta["beta1"], beta2=meta["beta2"],
                         eps=meta["eps"])
        adam.step_count = meta["step_count"]
        for tag, buffers in (("m", adam.m), ("v", adam.v)):
            sub = os.path.join(directory, f"adam_{tag}")
            for name in params:
                buffers[name] = parr.read_array(
                    os.path.join(sub, f"{name}.parr")).reshape(
                        params[name].shape)
    return surrogate, adam, manifest
