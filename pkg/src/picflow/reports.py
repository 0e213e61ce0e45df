"""Evaluation reports: relative-error maps and stats, PGM heatmaps,
matplotlib figures, and CSV emission.

Near-well cells are those within Chebyshev radius 3 of any well; the
partition covers every cell exactly once (near-well vs far-field).
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

NEAR_WELL_RADIUS = 3


class ReportError(ValueError):
    pass


def _atomic_write_bytes(path, payload: bytes):
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def near_well_mask(ny: int, nx: int, well_ij: list[tuple[int, int]]) -> np.ndarray:
    """Boolean (ny, nx) mask of cells within Chebyshev radius 3 of a well."""
    jj, ii = np.mgrid[0:ny, 0:nx]
    mask = np.zeros((ny, nx), dtype=bool)
    for i, j in well_ij:
        mask |= np.maximum(np.abs(ii - i), np.abs(jj - j)) <= NEAR_WELL_RADIUS
    return mask


def relative_error_map(ref: np.ndarray, test: np.ndarray) -> np.ndarray:
    """Elementwise |test - ref| / ref; ref must be strictly positive."""
    ref = np.asarray(ref, dtype=float)
    test = np.asarray(test, dtype=float)
    if ref.shape != test.shape:
        raise ReportError(f"shape mismatch: {ref.shape} vs {test.shape}")
    if np.any(ref <= 0):
        raise ReportError("reference field has non-positive entries; "
                          "relative error undefined")
    return np.abs(test - ref) / ref


def _stats(values: np.ndarray) -> dict[str, float]:
    if values.size == 0:
        return {"max": float("nan"), "mean": float("nan"), "p95": float("nan")}
    return {"max": float(values.max()), "mean": float(values.mean()),
            "p95": float(np.percentile(values, 95))}


@dataclass(frozen=True)
class SnapshotError:
    index: int
    field: np.ndarray  # (ny, nx) relative error
    overall: dict[str, float]
    near_well: dict[str, float]
    far_field: dict[str, float]


@dataclass(frozen=True)
class ErrorReport:
    snapshots: tuple[SnapshotError, ...]
    mask: np.ndarray  # near-well partition

    def write_csv(self, path):
        rows = ["snapshot,region,max,mean,p95"]
        for s in self.snapshots:
            for region, st in (("overall", s.overall), ("near_well", s.near_well),
                               ("far_field", s.far_field)):
                rows.append(f"{s.index},{region},{st['max']!r},"
                            f"{st['mean']!r},{st['p95']!r}")
        _atomic_write_bytes(path, ("\n".join(rows) + "\n").encode())


def error_report(ref_fields: np.ndarray, test_fields: np.ndarray,
                 well_ij: list[tuple[int, int]],
                 indices=None) -> ErrorReport:
    """Per-snapshot relative-error stats split near-well vs far-field.

    ``ref_fields``/``test_fields`` are (t, ny, nx); ``indices`` selects
    snapshots (defaults to all).
    """
    ref_fields = np.asarray(ref_fields, dtype=float)
    test_fields = np.asarray(test_fields, dtype=float)
    if ref_fields.shape != test_fields.shape or ref_fields.ndim != 3:
        raise ReportError("expected matching (snapshots, ny, nx) stacks")
    _, ny, nx = ref_fields.shape
    mask = near_well_mask(ny, nx, well_ij)
    if indices is None:
        indices = range(ref_fields.shape[0])
    snaps = []
    for k in indices:
        field = relative_error_map(ref_fields[k], test_fields[k])
        snaps.append(SnapshotError(
            index=int(k), field=field,
            overall=_stats(field.ravel()),
            near_well=_stats(field[mask]),
            far_field=_stats(field[~mask])))
    return ErrorReport(tuple(snaps), mask)


def heatmap(field: np.ndarray, out_path, palette: str = "gray") -> dict:
    """Write a min-max scaled 8-bit PGM (P5) plus a JSON sidecar of bounds."""
    field = np.asarray(field, dtype=float)
    if field.ndim != 2:
        raise ReportError("heatmap expects a 2D field")
    if not np.all(np.isfinite(field)):
        raise ReportError("heatmap field contains non-finite values")
    if palette != "gray":
        raise ReportError(f"unsupported palette {palette!r}")
    lo, hi = float(field.min()), float(field.max())
    degenerate = hi == lo
    if degenerate:
        pixels = np.full(field.shape, 128, dtype=np.uint8)
    else:
        pixels = np.round((field - lo) / (hi - lo) * 255).astype(np.uint8)
    ny, nx = field.shape
    header = f"P5\n{nx} {ny}\n255\n".encode()
    _atomic_write_bytes(out_path, header + pixels.tobytes())
    sidecar = {"min": lo, "max": hi, "degenerate_constant_field": degenerate}
    _atomic_write_bytes(str(out_path) + ".json",
                        json.dumps(sidecar, indent=2).encode())
    return sidecar


def save_error_figure(field: np.ndarray, out_path, title: str = ""):
    """Render a relative-error map to an image file via matplotlib."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axis = plt.subplots(figsize=(5, 4))
    im = axis.imshow(field, origin="lower", cmap="viridis")
    axis.set_xlabel("i")
    axis.set_ylabel("j")
    if title:
        axis.set_title(title)
    fig.colorbar(im, ax=axis, label="relative error")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def save_loss_figure(epochs, losses, out_path):
    """Render the training loss history (log scale) to an image file."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axis = plt.subplots(figsize=(5, 4))
    axis.semilogy(epochs, losses)
    axis.set_xlabel("epoch")
    axis.set_ylabel("physics loss")
    axis.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def write_well_rates_csv(path, dt_days: float, rates: np.ndarray,
                         well_names: list[str]):
    """CSV of per-well rates: columns step, day, well id, rate (m^3/s)."""
    rows = ["step,day,well,rate_m3_per_s"]
    for k in range(rates.shape[0]):
        for w, name in enumerate(well_names):
            rows.append(f"{k},{k * dt_days!r},{name},{rates[k, w]!r}")
    _atomic_write_bytes(path, ("\n".join(rows) + "\n").encode())
