"""Two-point correlation S2(r) of one phase of a voxel volume."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .volume import Phase, VoxelVolume


@dataclass(frozen=True)
class Exhaustive:
    """Every in-volume pair along the three lattice axes."""


@dataclass(frozen=True)
class MonteCarlo:
    """Uniform random pairs at uniform random directions."""

    n_pairs: int = 200_000
    seed: int | None = 0


EXHAUSTIVE = Exhaustive()


@dataclass(frozen=True)
class TpcCurve:
    radii: np.ndarray
    probabilities: np.ndarray
    counts: np.ndarray

    def standard_errors(self) -> np.ndarray:
        """Binomial standard error of each bin, treating pairs as independent."""
        p = self.probabilities
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.sqrt(p * (1.0 - p) / self.counts)

    def at(self, r: int) -> float:
        idx = np.nonzero(self.radii == r)[0]
        if idx.size == 0:
            raise KeyError(f"no bin at r={r}")
        return float(self.probabilities[idx[0]])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("r", "probability", "pair_count"))
        for r, p, n in zip(self.radii, self.probabilities, self.counts):
            writer.writerow((int(r), repr(float(p)), int(n)))
        return buf.getvalue()


def _phase_fraction(mask: np.ndarray) -> tuple[int, int]:
    return int(np.count_nonzero(mask)), mask.size


def _exhaustive(mask: np.ndarray, max_r: int):
    hits = np.zeros(max_r + 1, dtype=np.int64)
    pairs = np.zeros(max_r + 1, dtype=np.int64)
    hits[0], pairs[0] = _phase_fraction(mask)
    for r in range(1, max_r + 1):
        for axis in range(3):
            n = mask.shape[axis]
            if r >= n:
                continue
            a = np.take(mask, np.arange(0, n - r), axis=axis)
            b = np.take(mask, np.arange(r, n), axis=axis)
            hits[r] += np.count_nonzero(a & b)
            pairs[r] += a.size
    return hits, pairs


def _monte_carlo(mask: np.ndarray, max_r: int, n_pairs: int, seed):
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    # Philox is counter based, so the stream can be split across workers
    # without changing the sequence.
    rng = np.random.Generator(np.random.Philox(seed))
    shape = np.array(mask.shape)

    hits = np.zeros(max_r + 1, dtype=np.int64)
    pairs = np.zeros(max_r + 1, dtype=np.int64)
    hits[0], pairs[0] = _phase_fraction(mask)

    start = rng.integers(0, shape, size=(n_pairs, 3))
    direction = rng.standard_normal((n_pairs, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    dist = rng.uniform(0.5, max_r + 0.5, size=n_pairs)
    end = np.rint(start + dist[:, None] * direction).astype(np.int64)

    inside = np.all((end >= 0) & (end < shape), axis=1)
    start, end = start[inside], end[inside]
    sep = np.linalg.norm((end - start).astype(float), axis=1)
    bins = np.floor(sep + 0.5).astype(np.int64)
    # coincident endpoints belong to the exact r=0 bin
    keep = (bins >= 1) & (bins <= max_r)
    start, end, bins = start[keep], end[keep], bins[keep]

    both = mask[tuple(start.T)] & mask[tuple(end.T)]
    pairs += np.bincount(bins, minlength=max_r + 1)
    hits += np.bincount(bins, weights=both, minlength=max_r + 1).astype(np.int64)
    return hits, pairs


def two_point_correlation(
    vol: VoxelVolume,
    phase: Phase = Phase.VOID,
    max_r: int = 10,
    estimator=EXHAUSTIVE,
) -> TpcCurve:
    """Probability that both ends of a pair at separation r lie in ``phase``.

    Bins have unit width and are centered on integer radii.  Pairs with an
    endpoint outside the volume are discarded.  Bins that received no pairs
    are dropped from the returned curve.
    """
    if max_r < 1:
        raise ValueError("max_r must be >= 1")
    diagonal = float(np.linalg.norm(np.array(vol.dims) - 1))
    if max_r > diagonal:
        raise ValueError(f"max_r {max_r} exceeds the volume diagonal {diagonal:.3f}")
    mask = vol.phase_mask(phase)
    if isinstance(estimator, Exhaustive):
        hits, pairs = _exhaustive(mask, max_r)
    elif isinstance(estimator, MonteCarlo):
        hits, pairs = _monte_carlo(mask, max_r, estimator.n_pairs, estimator.seed)
    else:
        raise TypeError(f"unknown estimator {estimator!r}")
    present = pairs > 0
    radii = np.arange(max_r + 1)[present]
    return TpcCurve(
        radii=radii,
        probabilities=hits[present] / pairs[present],
        counts=pairs[present],
    )
