"""Experiment configuration: JSON-serializable dataclasses and validation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import coefficient
from .mesh import ConfigurationError

METHODS = ("slod", "lod")
RHS_KINDS = ("constant", "sinsin", "p0")
COEFF_KINDS = ("constant", "checkerboard")


@dataclass
class CoeffSpec:
    """Diffusion coefficient description (homogeneous or random checkerboard)."""

    kind: str = "checkerboard"
    value: float = 1.0  # used by kind="constant"
    eps_level: int = 5
    alpha: float = 0.01
    beta: float = 1.0
    seed: int = 11

    def validate(self, d: int) -> None:
        if self.kind not in COEFF_KINDS:
            raise ConfigurationError(f"unknown coefficient kind {self.kind!r}")
        if self.kind == "checkerboard" and not self.alpha < self.beta:
            raise ConfigurationError("checkerboard needs alpha < beta")

    def build(self, d: int) -> coefficient.CoefficientField:
        if self.kind == "constant":
            return coefficient.constant(self.value, d=d, eps_level=0)
        return coefficient.random_checkerboard(
            self.eps_level, self.alpha, self.beta, self.seed, d=d
        )


@dataclass
class RhsSpec:
    """Right-hand side description.

    ``constant`` is exact P0 data; ``sinsin`` is sin(x1)sin(x2) (sin(x1) in
    1D); ``p0`` carries explicit element values for the coarse mesh in use.
    """

    kind: str = "constant"
    value: float = 1.0
    values: list | None = None

    def validate(self) -> None:
        if self.kind not in RHS_KINDS:
            raise ConfigurationError(f"unknown rhs kind {self.kind!r}")
        if self.kind == "p0" and not self.values:
            raise ConfigurationError("rhs kind 'p0' needs element values")

    def build(self, coarse_mesh):
        from .fem import P0Function

        if self.kind == "constant":
            return float(self.value)
        if self.kind == "p0":
            return P0Function(coarse_mesh, np.asarray(self.values, dtype=float))
        if coarse_mesh.d == 1:
            return lambda x: np.sin(x[:, 0])
        return lambda x: np.sin(x[:, 0]) * np.sin(x[:, 1])


@dataclass
class ExperimentConfig:
    """One reproducible experiment: meshes, coefficient, data, methods."""

    d: int = 2
    coarse_levels: list = field(default_factory=lambda: [2, 3, 4])
    ell: list = field(default_factory=lambda: [1, 2, 3])
    fine_level: int = 7
    coeff: CoeffSpec = field(default_factory=CoeffSpec)
    rhs: RhsSpec = field(default_factory=RhsSpec)
    methods: list = field(default_factory=lambda: ["slod"])
    samples_multiplier: int = 5
    seed: int = 0
    workers: int = 1
    out_dir: str = "results"

    def __post_init__(self):
        if isinstance(self.coeff, dict):
            self.coeff = CoeffSpec(**self.coeff)
        if isinstance(self.rhs, dict):
            self.rhs = RhsSpec(**self.rhs)
        self.validate()

    def validate(self) -> None:
        if self.d not in (1, 2):
            raise ConfigurationError(f"dimension must be 1 or 2, got {self.d}")
        if not self.coarse_levels:
            raise ConfigurationError("need at least one coarse level")
        if self.fine_level < max(self.coarse_levels) + 2:
            raise ConfigurationError(
                "fine level must exceed the finest coarse level by at least 2"
            )
        if self.coeff.kind == "checkerboard" and self.fine_level < self.coeff.eps_level:
            raise ConfigurationError("fine level must resolve the coefficient")
        if any(l < 1 for l in self.ell):
            raise ConfigurationError("oversampling parameters must be >= 1")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigurationError(f"unknown method {m!r}")
        if self.samples_multiplier < 1:
            raise ConfigurationError("samples multiplier must be >= 1")
        if self.workers < 1:
            raise ConfigurationError("worker count must be >= 1")
        self.coeff.validate(self.d)
        self.rhs.validate()

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        """Copy with the given non-None fields replaced (CLI flag overrides)."""
        updates = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **updates)
