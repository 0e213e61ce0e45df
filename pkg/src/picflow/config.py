"""JSON case-configuration parsing.

Dimensional quantities are given as {"value": ..., "unit": ...} with an
explicit field-unit tag; bare numbers are taken as already-SI. The
permeability may be a scalar, an inline per-cell list, or a reference to a
portable array file ({"file": "...", "unit": "mD"}).
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import parr
from .reservoir import (ControlKind, ControlSchedule, Grid, ReservoirModel,
                        RockFluid, WellSpec)
from .units import CP_TO_PAS, DAY_TO_S, MD_TO_M2, PSI_TO_PA

_FACTORS = {
    "m": 1.0,
    "Pa": 1.0,
    "s": 1.0,
    "m2": 1.0,
    "Pa.s": 1.0,
    "per_Pa": 1.0,
    "m3_per_s": 1.0,
    "dimensionless": 1.0,
    "psi": PSI_TO_PA,
    "day": DAY_TO_S,
    "mD": MD_TO_M2,
    "cp": CP_TO_PAS,
    "per_psi": 1.0 / PSI_TO_PA,
}


class ConfigError(ValueError):
    """Malformed configuration; message names the offending key."""


def _quantity(node, path: str) -> float:
    if isinstance(node, (int, float)) and not isinstance(node, bool):
        return float(node)
    if isinstance(node, dict) and "value" in node:
        unit = node.get("unit", "dimensionless")
        if unit not in _FACTORS:
            raise ConfigError(f"{path}.unit: unknown unit tag {unit!r}")
        try:
            return float(node["value"]) * _FACTORS[unit]
        except (TypeError, ValueError):
            raise ConfigError(f"{path}.value: not a number") from None
    raise ConfigError(f"{path}: expected a number or {{value, unit}} object")


def _require(obj: dict, key: str, path: str):
    if key not in obj:
        raise ConfigError(f"{path}.{key}: missing")
    return obj[key]


def _int(node, path: str) -> int:
    if not isinstance(node, int) or isinstance(node, bool):
        raise ConfigError(f"{path}: expected an integer")
    return node


def _field(node, n: int, path: str, base_dir: str) -> np.ndarray:
    """Per-cell field: scalar, inline list, or PARR file reference."""
    if isinstance(node, dict) and "file" in node:
        unit = node.get("unit", "dimensionless")
        if unit not in _FACTORS:
            raise ConfigError(f"{path}.unit: unknown unit tag {unit!r}")
        file_path = os.path.join(base_dir, node["file"])
        if not os.path.exists(file_path):
            raise ConfigError(f"{path}.file: no such file {file_path}")
        values = parr.read_array(file_path).reshape(-1) * _FACTORS[unit]
        if values.size != n:
            raise ConfigError(f"{path}.file: has {values.size} cells, grid has {n}")
        return values
    if isinstance(node, list):
        values = np.array([_quantity(v, f"{path}[{k}]")
                           for k, v in enumerate(node)])
        if values.size != n:
            raise ConfigError(f"{path}: has {values.size} cells, grid has {n}")
        return values
    return np.full(n, _quantity(node, path))


def load_case(path) -> tuple[ReservoirModel, ControlSchedule]:
    """Parse a case file into a reservoir model and its control schedule."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    base_dir = os.path.dirname(os.fspath(path)) or "."

    g_node = _require(doc, "grid", "config")
    grid = Grid(
        nx=_int(_require(g_node, "nx", "grid"), "grid.nx"),
        ny=_int(_require(g_node, "ny", "grid"), "grid.ny"),
        dx=_quantity(_require(g_node, "dx", "grid"), "grid.dx"),
        dy=_quantity(_require(g_node, "dy", "grid"), "grid.dy"),
        dz=_quantity(g_node.get("dz", 1.0), "grid.dz"),
    )

    r_node = _require(doc, "rock", "config")
    rock = RockFluid(
        porosity=_field(_require(r_node, "porosity", "rock"),
                        grid.n, "rock.porosity", base_dir),
        permeability=_field(_require(r_node, "permeability", "rock"),
                            grid.n, "rock.permeability", base_dir),
        viscosity=_quantity(_require(r_node, "viscosity", "rock"),
                            "rock.viscosity"),
        compressibility=_quantity(_require(r_node, "compressibility", "rock"),
                                  "rock.compressibility"),
        initial_pressure=_quantity(_require(r_node, "initial_pressure", "rock"),
                                   "rock.initial_pressure"),
        density=_quantity(r_node.get("density", 1000.0), "rock.density"),
    )

    wells = []
    for k, w_node in enumerate(_require(doc, "wells", "config")):
        path_k = f"wells[{k}]"
        kind_tag = w_node.get("control", "bhp")
        if kind_tag not in ("bhp", "rate"):
            raise ConfigError(f"{path_k}.control: must be 'bhp' or 'rate'")
        wells.append(WellSpec(
            i=_int(_require(w_node, "i", path_k), f"{path_k}.i"),
            j=_int(_require(w_node, "j", path_k), f"{path_k}.j"),
            radius=_quantity(_require(w_node, "radius", path_k),
                             f"{path_k}.radius"),
            skin=_quantity(w_node.get("skin", 0.0), f"{path_k}.skin"),
            kind=ControlKind(kind_tag),
            name=w_node.get("name", f"W{k}"),
        ))

    s_node = _require(doc, "schedule", "config")
    dt = _quantity(_require(s_node, "dt", "schedule"), "schedule.dt")
    segments = []
    for k, seg in enumerate(_require(s_node, "segments", "schedule")):
        path_k = f"schedule.segments[{k}]"
        steps = _int(_require(seg, "steps", path_k), f"{path_k}.steps")
        if steps < 1:
            raise ConfigError(f"{path_k}.steps: must be >= 1")
        controls = [_quantity(c, f"{path_k}.controls[{w}]")
                    for w, c in enumerate(_require(seg, "controls", path_k))]
        if len(controls) != len(wells):
            raise ConfigError(f"{path_k}.controls: {len(controls)} values "
                              f"for {len(wells)} wells")
        segments.append((steps, np.array(controls)))
    schedule = ControlSchedule.from_segments(segments, dt)

    return ReservoirModel(grid, rock, tuple(wells)), schedule
