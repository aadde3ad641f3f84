"""Physical constants, box geometry and the beta-plane Coriolis profile."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, asdict
from typing import Mapping

import numpy as np

from .errors import EquatorCrossing, NonPositiveConstant, ValidationError

_POSITIVE = ("epsilon", "delta", "kappa_h", "kappa_v", "alpha", "lx", "ly", "h")


@dataclass(frozen=True)
class ModelParams:
    """All constants of the planetary geostrophic model on the box [0,lx]x[0,ly]x(-h,0).

    epsilon, delta are the horizontal and vertical Rayleigh friction
    coefficients, kappa_h/kappa_v the heat diffusivities, alpha the surface
    relaxation coefficient, and f = f0 + beta*y the Coriolis parameter.
    Construction validates, so an existing instance is always admissible.
    """

    epsilon: float = 1.0
    delta: float = 1.0
    kappa_h: float = 1.0
    kappa_v: float = 1.0
    alpha: float = 1.0
    f0: float = 1.0
    beta: float = 0.1
    lx: float = 1.0
    ly: float = 1.0
    h: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise ValidationError(f.name, f"{f.name} must be a real number (got {value!r})")
            if not math.isfinite(value):
                raise ValidationError(f.name, f"{f.name} must be finite (got {value!r})")
            object.__setattr__(self, f.name, value)
        for name in _POSITIVE:
            if not getattr(self, name) > 0.0:
                raise NonPositiveConstant(name, getattr(self, name))
        ends = (self.f0, self.f0 + self.beta * self.ly)
        if min(ends) <= 0.0:
            raise EquatorCrossing(min(ends))

    def replace(self, **changes) -> "ModelParams":
        data = asdict(self)
        data.update(changes)
        return ModelParams(**data)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CoriolisBounds:
    f_min: float
    f_max: float


def validate_params(raw: Mapping | None = None, **kwargs) -> ModelParams:
    """Build a ModelParams from a mapping (or keywords), rejecting unknown names."""
    data = dict(raw or {})
    data.update(kwargs)
    known = {f.name for f in fields(ModelParams)}
    for key in data:
        if key not in known:
            raise ValidationError(key, f"unknown model parameter {key!r}")
    return ModelParams(**data)


def coriolis_at(params: ModelParams, y):
    """f0 + beta*y; accepts scalars or arrays."""
    if np.ndim(y) == 0:
        return params.f0 + params.beta * float(y)
    return params.f0 + params.beta * np.asarray(y, dtype=float)


def coriolis_bounds(params: ModelParams) -> CoriolisBounds:
    ends = (params.f0, params.f0 + params.beta * params.ly)
    return CoriolisBounds(min(ends), max(ends))
