"""Porosity, cubical-complex cell counts, Minkowski functionals and REV analysis."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .volume import Phase, VoxelVolume, random_origins


@dataclass(frozen=True)
class CellCounts:
    n0: int
    n1: int
    n2: int
    n3: int


@dataclass(frozen=True)
class MinkowskiReport:
    V: int
    S: int
    B: float
    chi: int
    porosity: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


REPORT_FIELDS = ("porosity", "V", "S", "B", "chi")


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("sample",) + REPORT_FIELDS)
    for i, rep in enumerate(reports):
        writer.writerow((i,) + tuple(repr(getattr(rep, f)) for f in REPORT_FIELDS))
    return buf.getvalue()


def porosity(vol: VoxelVolume) -> float:
    return float(np.count_nonzero(vol.data == Phase.VOID)) / vol.data.size


def cell_complex(mask: np.ndarray) -> np.ndarray:
    """Occupancy of the cubical complex on the doubled lattice.

    Cell midpoints are keyed by doubled integer coordinates: voxel ``(i,j,k)``
    sits at ``(2i+1, 2j+1, 2k+1)`` and its faces, edges and vertices at the
    26 neighbouring doubled points.  The number of odd coordinates of a key
    is the dimension of the cell.
    """
    mask = np.asarray(mask, dtype=bool)
    nx, ny, nz = mask.shape
    grid = np.zeros((2 * nx + 1, 2 * ny + 1, 2 * nz + 1), dtype=bool)
    for dx in (0, 1, 2):
        for dy in (0, 1, 2):
            for dz in (0, 1, 2):
                grid[dx : dx + 2 * nx : 2, dy : dy + 2 * ny : 2, dz : dz + 2 * nz : 2] |= mask
    return grid


def count_cells(vol: VoxelVolume, phase: Phase = Phase.SOLID) -> CellCounts:
    """Distinct vertices, edges, faces and voxels of the selected phase."""
    return count_cells_mask(vol.phase_mask(phase))


def count_cells_mask(mask: np.ndarray) -> CellCounts:
    grid = cell_complex(mask)
    shape = grid.shape
    odd = [np.arange(n) % 2 for n in shape]
    dim = odd[0][:, None, None] + odd[1][None, :, None] + odd[2][None, None, :]
    counts = np.bincount(dim[grid], minlength=4)
    return CellCounts(*(int(c) for c in counts))


def minkowski(counts: CellCounts, porosity: float | None = None) -> MinkowskiReport:
    n0, n1, n2, n3 = counts.n0, counts.n1, counts.n2, counts.n3
    # B is a half-integer; (3*n3 + n1) is even iff B is integral.
    half_b = 3 * n3 - 2 * n2 + n1
    return MinkowskiReport(
        V=n3,
        S=-6 * n3 + 2 * n2,
        B=half_b / 2,
        chi=-n3 + n2 - n1 + n0,
        porosity=porosity,
    )


def analyze(vol: VoxelVolume, phase: Phase = Phase.SOLID) -> MinkowskiReport:
    """Porosity plus the four functionals of ``phase``."""
    return minkowski(count_cells(vol, phase), porosity=porosity(vol))


@dataclass
class RevCurve:
    entries: list[tuple[int, list[float]]] = field(default_factory=list)

    @property
    def sizes(self) -> list[int]:
        return [s for s, _ in self.entries]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("size", "sample", "porosity"))
        for size, values in self.entries:
            for i, v in enumerate(values):
                writer.writerow((size, i, repr(v)))
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {"entries": [{"size": s, "porosity": list(v)} for s, v in self.entries]}
        return json.dumps(doc, indent=2) + "\n"


class RevNotReachedError(RuntimeError):
    pass


def rev_sizes(start_size: int, step: int, min_size: int) -> list[int]:
    return list(range(start_size, min_size - 1, -step))


def rev_curve(
    vol: VoxelVolume,
    start_size: int | None = None,
    step: int = 10,
    min_size: int = 2,
    samples_per_size: int = 20,
    seed=None,
) -> RevCurve:
    """Porosity of random cubes on a decreasing size ladder.

    Sizes run ``start_size, start_size - step, ...`` down to ``min_size``.
    """
    if start_size is None:
        start_size = min(vol.dims)
    if min_size < 2:
        raise ValueError("min_size must be >= 2")
    if step < 1:
        raise ValueError("step must be >= 1")
    if samples_per_size < 1:
        raise ValueError("samples_per_size must be >= 1")
    if start_size > min(vol.dims):
        raise ValueError(f"start size {start_size} exceeds volume dims {vol.dims}")
    if start_size < min_size:
        raise ValueError(f"start size {start_size} is below min_size {min_size}")

    rng = np.random.default_rng(seed)
    void = (vol.data == Phase.VOID).astype(np.int64)
    # summed-volume table: each cube's void count in O(1)
    sat = np.zeros(tuple(n + 1 for n in void.shape), dtype=np.int64)
    sat[1:, 1:, 1:] = void.cumsum(0).cumsum(1).cumsum(2)

    curve = RevCurve()
    for size in rev_sizes(start_size, step, min_size):
        o = random_origins(vol.dims, size, samples_per_size, rng)
        x0, y0, z0 = o[:, 0], o[:, 1], o[:, 2]
        x1, y1, z1 = x0 + size, y0 + size, z0 + size
        total = (
            sat[x1, y1, z1]
            - sat[x0, y1, z1]
            - sat[x1, y0, z1]
            - sat[x1, y1, z0]
            + sat[x0, y0, z1]
            + sat[x0, y1, z0]
            + sat[x1, y0, z0]
            - sat[x0, y0, z0]
        )
        curve.entries.append((size, [float(t) / size**3 for t in total]))
    return curve


def relative_spread(values) -> float:
    """Interquartile range over median.  Zero spread around a zero median is 0."""
    q1, med, q3 = np.percentile(np.asarray(values, dtype=float), [25, 50, 75])
    iqr = q3 - q1
    if iqr == 0:
        return 0.0
    if med == 0:
        return float("inf")
    return float(iqr / abs(med))


def determine_rev(curve: RevCurve, tolerance: float = 0.05) -> int:
    """Smallest size that, together with every larger size, has spread <= tolerance."""
    if not curve.entries:
        raise ValueError("empty REV curve")
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    ordered = sorted(curve.entries, key=lambda e: e[0], reverse=True)
    rev = None
    for size, values in ordered:
        if relative_spread(values) > tolerance:
            break
        rev = size
    if rev is None:
        raise RevNotReachedError(
            f"no size reaches relative spread <= {tolerance} (largest size {ordered[0][0]})"
        )
    return rev
