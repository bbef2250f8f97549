"""Procedural porous volumes for desk-scale training and statistical fixtures."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .volume import Phase, VoxelVolume


@dataclass(frozen=True)
class FieldSpec:
    size: int
    correlation_length: float = 2.0
    target_porosity: float = 0.3
    seed: int | None = 0

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("size must be >= 1")
        if not 0.0 < self.target_porosity < 1.0:
            raise ValueError("target_porosity must lie in (0, 1)")
        if self.correlation_length < 0:
            raise ValueError("correlation_length must be >= 0")


def gaussian_field_volume(spec: FieldSpec) -> VoxelVolume:
    """Threshold a smoothed white-noise field at its porosity quantile.

    The ``round(target * size**3)`` lowest field values become VOID, so the
    realized porosity is the target to within one voxel.
    """
    rng = np.random.default_rng(spec.seed)
    field = rng.standard_normal((spec.size,) * 3)
    if spec.correlation_length > 0:
        field = gaussian_filter(field, sigma=spec.correlation_length, mode="reflect")
    n_void = int(round(spec.target_porosity * field.size))
    order = np.argsort(field, axis=None, kind="stable")
    data = np.full(field.size, int(Phase.SOLID), dtype=np.uint8)
    data[order[:n_void]] = int(Phase.VOID)
    return VoxelVolume(data.reshape(field.shape))


def bernoulli_volume(size: int, p_void: float, seed=None) -> VoxelVolume:
    """iid voxels, VOID with probability ``p_void``."""
    if not 0.0 <= p_void <= 1.0:
        raise ValueError("p_void must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    void = rng.random((size,) * 3) < p_void
    return VoxelVolume(np.where(void, int(Phase.VOID), int(Phase.SOLID)).astype(np.uint8))
