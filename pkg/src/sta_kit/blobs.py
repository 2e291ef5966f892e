"""Synthetic spatio-temporal activations on a grid, and dataset file I/O.

Each series holds a single activation: one random vertex of a region fires at
one time point with a random amplitude, then the (T, h, w) volume is smoothed by
a Gaussian filter in time and space. Groups are the four (region, time point)
combinations.

Series are stored as headerless CSV (T rows, p columns, round-trip decimals);
a JSON manifest lists the items, their labels and the geometry.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DomainError
from . import uot


@dataclass(frozen=True)
class BlobConfig:
    h: int = 16
    w: int = 16
    T: int = 20
    regions: tuple[tuple[int, ...], tuple[int, ...]] | None = None
    t1: int = 5
    t2: int = 15
    n_per_group: int = 10
    amp_low: float = 1.0
    amp_high: float = 3.0
    sigma_time: float = 1.0
    sigma_space: float = 1.0
    seed: int = 0


def default_regions(h: int, w: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """The top-left and bottom-right quadrants of the grid."""
    top = tuple(r * w + c for r in range(h // 2) for c in range(w // 2))
    bottom = tuple(r * w + c for r in range(h - h // 2, h) for c in range(w - w // 2, w))
    return top, bottom


@dataclass
class BlobDataset:
    series: list[np.ndarray]
    labels: list[str]
    regions: list[str]
    times: list[int]
    config: BlobConfig
    vertices: list[int] = field(default_factory=list)


def generate_blobs(cfg: BlobConfig) -> BlobDataset:
    """Build ``4 * n_per_group`` series, grouped by region and activation time.

    The generator is numpy's PCG64 seeded with ``cfg.seed``.
    """
    p = cfg.h * cfg.w
    regions = cfg.regions or default_regions(cfg.h, cfg.w)
    if len(regions) != 2 or not all(regions):
        raise DomainError("exactly two nonempty regions are required")
    for reg in regions:
        if any(not 0 <= v < p for v in reg):
            raise DomainError(f"region vertex outside the {cfg.h}x{cfg.w} grid")
    if set(regions[0]) & set(regions[1]):
        raise DomainError("regions must be disjoint")
    if cfg.t1 == cfg.t2 or not (1 <= cfg.t1 <= cfg.T and 1 <= cfg.t2 <= cfg.T):
        raise DomainError("t1 and t2 must be distinct and lie in [1, T]")
    if not 0 < cfg.amp_low <= cfg.amp_high:
        raise DomainError("amplitude range must satisfy 0 < low <= high")

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    out = BlobDataset([], [], [], [], cfg)
    for r_idx, reg in enumerate(regions):
        for t in (cfg.t1, cfg.t2):
            for _ in range(cfg.n_per_group):
                v = int(reg[rng.integers(len(reg))])
                amp = rng.uniform(cfg.amp_low, cfg.amp_high)
                vol = np.zeros((cfg.T, cfg.h, cfg.w))
                vol[t - 1, v // cfg.w, v % cfg.w] = amp
                vol = gaussian_filter(vol, (cfg.sigma_time, cfg.sigma_space, cfg.sigma_space), mode="constant")
                out.series.append(np.maximum(vol.reshape(cfg.T, p), 0.0))
                name = "AB"[r_idx]
                out.labels.append(f"{name}_t{t}")
                out.regions.append(name)
                out.times.append(t)
                out.vertices.append(v)
    return out


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def write_series_csv(path: Path, data: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(data, dtype=np.float64):
            wr.writerow([repr(float(v)) for v in row])


def read_series_csv(path: Path) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    except (OSError, ValueError) as exc:
        raise DomainError(f"cannot read series {path}: {exc}") from exc
    if not rows or len({len(r) for r in rows}) != 1:
        raise DomainError(f"series {path} is empty or ragged")
    return np.array(rows)


def write_dataset(ds: BlobDataset, out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    items = []
    for i, (x, lab) in enumerate(zip(ds.series, ds.labels)):
        name = f"series_{i:03d}.csv"
        write_series_csv(out_dir / name, x)
        items.append({"path": name, "label": lab})
    manifest = {
        "items": items,
        "geometry": {"kind": "grid", "h": ds.config.h, "w": ds.config.w, "exponent": 2.0},
        "normalize": True,
        "signed": None,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


class EmptyManifestError(DomainError):
    """A manifest without items."""


@dataclass
class Manifest:
    series: list[np.ndarray]
    labels: list[str]
    geometry: uot.GroundGeometry
    normalize: bool
    signed: str | None


def read_edges_csv(path: Path) -> list[tuple[int, int, float]]:
    try:
        with open(path, newline="") as fh:
            return [(int(r[0]), int(r[1]), float(r[2])) for r in csv.reader(fh) if r]
    except (OSError, ValueError, IndexError) as exc:
        raise DomainError(f"cannot read edge list {path}: {exc}") from exc


def geometry_from_spec(spec: dict, base: Path, p: int | None = None) -> uot.GroundGeometry:
    kind = spec.get("kind")
    if kind == "grid":
        return uot.ground_metric_grid(int(spec["h"]), int(spec["w"]), float(spec.get("exponent", 2.0)))
    if kind == "graph":
        n = int(spec.get("p", p or 0))
        return uot.ground_metric_graph(read_edges_csv(base / spec["edges"]), n)
    raise DomainError(f"unknown geometry kind {kind!r}")


def read_manifest(path: Path) -> Manifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise DomainError(f"cannot read manifest {path}: {exc}") from exc
    items = raw.get("items") or []
    if not items:
        raise EmptyManifestError("manifest has no items")
    series = [read_series_csv(path.parent / it["path"]) for it in items]
    labels = [str(it.get("label", f"item{i}")) for i, it in enumerate(items)]
    geom = geometry_from_spec(raw.get("geometry", {}), path.parent, series[0].shape[1])
    if any(s.shape[1] != geom.p for s in series):
        raise DomainError(f"items disagree with geometry p={geom.p}")
    signed = raw.get("signed")
    return Manifest(series, labels, geom, bool(raw.get("normalize", True)), signed)


def loo_1nn_accuracy(D: np.ndarray, labels: Sequence[str]) -> float:
    """Leave-one-out 1-nearest-neighbour accuracy from a dissimilarity matrix."""
    D = np.array(D, dtype=np.float64)
    np.fill_diagonal(D, np.inf)
    nn = np.argmin(D, axis=1)
    lab = np.asarray(labels)
    return float(np.mean(lab[nn] == lab))


def group_means(D: np.ndarray, labels: Sequence[str]) -> dict[tuple[str, str], float]:
    """Mean off-diagonal dissimilarity for every (group, group) pair."""
    lab = np.asarray(labels)
    groups = sorted(set(labels))
    out = {}
    for g in groups:
        for k in groups:
            mask = (lab[:, None] == g) & (lab[None, :] == k)
            if g == k:
                mask &= ~np.eye(len(lab), dtype=bool)
            out[(g, k)] = float(D[mask].mean())
    return out
