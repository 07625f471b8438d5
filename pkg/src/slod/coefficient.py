"""Scalar diffusion coefficients, piecewise constant on a dyadic epsilon-mesh."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .mesh import CartesianMesh, ConfigurationError, build_mesh


@dataclass(frozen=True)
class CoefficientField:
    """Positive scalar field, constant per element of the epsilon-level mesh.

    ``values`` holds one entry per epsilon-element in flat (axis-0-fastest)
    order; ``alpha``/``beta`` are the essential bounds of the sampling range.
    """

    d: int
    eps_level: int
    values: np.ndarray
    alpha: float
    beta: float

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        n_expected = (2 ** self.eps_level) ** self.d
        if vals.shape != (n_expected,):
            raise ConfigurationError(
                f"expected {n_expected} epsilon-element values, got {vals.shape}"
            )
        if not (0 < self.alpha <= self.beta < np.inf):
            raise ConfigurationError(
                f"need 0 < alpha <= beta < inf, got alpha={self.alpha}, beta={self.beta}"
            )
        if vals.min() < self.alpha or vals.max() > self.beta:
            raise ConfigurationError("coefficient values violate the stated bounds")

    @property
    def eps_mesh(self) -> CartesianMesh:
        return build_mesh(self.d, self.eps_level)


def constant(c: float, d: int = 2, eps_level: int = 0) -> CoefficientField:
    """Homogeneous coefficient A = c."""
    if c <= 0:
        raise ConfigurationError(f"constant coefficient must be positive, got {c}")
    n = (2 ** eps_level) ** d
    return CoefficientField(d, eps_level, np.full(n, float(c)), c, c)


def random_checkerboard(
    eps_level: int, alpha: float, beta: float, seed: int, d: int = 2
) -> CoefficientField:
    """i.i.d. uniform element values in [alpha, beta] on the epsilon-mesh.

    The distribution on the stated range is not pinned down beyond being
    i.i.d.; uniform is used and recorded in experiment configs.
    """
    if alpha >= beta:
        raise ConfigurationError(f"need alpha < beta, got {alpha} >= {beta}")
    rng = np.random.default_rng(seed)
    n = (2 ** eps_level) ** d
    values = rng.uniform(alpha, beta, size=n)
    return CoefficientField(d, eps_level, values, alpha, beta)


def eval_on_fine(field: CoefficientField, fine_mesh: CartesianMesh) -> np.ndarray:
    """Per-fine-element coefficient values (fine mesh must resolve the eps-mesh)."""
    if fine_mesh.d != field.d:
        raise ConfigurationError("dimension mismatch between field and fine mesh")
    if fine_mesh.p < field.eps_level:
        raise ConfigurationError(
            f"fine level {fine_mesh.p} does not resolve epsilon level {field.eps_level}"
        )
    r = 2 ** (fine_mesh.p - field.eps_level)
    multi = np.stack(
        np.unravel_index(np.arange(fine_mesh.n_elements), fine_mesh.elem_shape, order="F"),
        axis=-1,
    )
    eps_multi = multi // r
    eps_flat = np.ravel_multi_index(
        tuple(eps_multi.T), field.eps_mesh.elem_shape, order="F"
    )
    return field.values[eps_flat]


def save_csv(field: CoefficientField, path) -> None:
    """Write a coefficient field as a CSV with a level header row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["d", "eps_level", "alpha", "beta"])
        writer.writerow([field.d, field.eps_level, repr(field.alpha), repr(field.beta)])
        writer.writerow(["value"])
        for v in field.values:
            writer.writerow([repr(float(v))])


def load_csv(path) -> CoefficientField:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    d, eps_level = int(rows[1][0]), int(rows[1][1])
    alpha, beta = float(rows[1][2]), float(rows[1][3])
    values = np.array([float(r[0]) for r in rows[3:]])
    return CoefficientField(d, eps_level, values, alpha, beta)
