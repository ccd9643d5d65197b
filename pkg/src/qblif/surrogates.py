"""Pseudo-derivatives for the non-differentiable firing functions.

``relsg_et`` and ``box_et`` return the derivative of the *integer level* with
respect to the membrane potential; the gamma-scaled output picks up an extra
factor of gamma in the backward pass (see :mod:`qblif.autograd`).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidScaleError, NumericFaultError

# g(u) = s / (2 * (1 + (pi * s * (u - v) / 2)^2)); peak s/2 at u = v.
ARCTAN_NORMALIZATION = 0.5
DEFAULT_ARCTAN_SHARPNESS = 2.0
# Sentinel for the exact derivative on a quantization boundary.
BOUNDARY_SENTINEL = np.inf


class SurrogateKind(str, enum.Enum):
    RELSG_ET = "relsg_et"
    BOX_ET = "box_et"
    ARCTAN = "arctan"
    EXACT_REFERENCE = "exact"

    @classmethod
    def parse(cls, value: "str | SurrogateKind") -> "SurrogateKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        for member in cls:
            if key in (member.value, member.name.lower()):
                return member
        if key in ("relsg", "relsget"):
            return cls.RELSG_ET
        if key in ("box", "boxet"):
            return cls.BOX_ET
        raise ValueError(f"unknown surrogate {value!r}")


@dataclass(frozen=True)
class Surrogate:
    kind: SurrogateKind = SurrogateKind.RELSG_ET
    arctan_sharpness: float = DEFAULT_ARCTAN_SHARPNESS

    def __post_init__(self):
        object.__setattr__(self, "kind", SurrogateKind.parse(self.kind))
        if not self.arctan_sharpness > 0:
            raise ValueError("arctan_sharpness must be > 0")


def _validate(u, gamma, n_max):
    g = float(gamma)
    if not np.isfinite(g) or g <= 0:
        raise InvalidScaleError(f"gamma must be > 0, got {gamma}")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    u = np.asarray(u, dtype=np.float64)
    if np.any(np.isnan(u)):
        raise NumericFaultError("NaN membrane potential")
    return u, g


def relsg_et(u, gamma, n_max) -> np.ndarray:
    """Unit plateau on ``[gamma, n_max * gamma]`` with exponential tails."""
    u, g = _validate(u, gamma, n_max)
    top = n_max * g
    out = np.ones_like(u)
    below = u < g
    above = u > top
    out[below] = np.exp(u[below] - g)
    out[above] = np.exp(-u[above] + top)
    return out


def box_et(u, gamma, n_max) -> np.ndarray:
    """Indicator of the burst window ``[gamma, n_max * gamma]``."""
    u, g = _validate(u, gamma, n_max)
    return ((u >= g) & (u <= n_max * g)).astype(np.float64)


def binary_box(u, v_theta, width: float = 1.0) -> np.ndarray:
    """Rectangular window of unit height centred on the threshold.

    Used for binary LIF under ``Box_ET``: the burst window collapses to a
    single point when ``n_max = 1``.
    """
    u = np.asarray(u, dtype=np.float64)
    return (np.abs(u - v_theta) <= 0.5 * width).astype(np.float64)


def arctan_surrogate(u, v_theta, sharpness=DEFAULT_ARCTAN_SHARPNESS) -> np.ndarray:
    if not sharpness > 0:
        raise ValueError("sharpness must be > 0")
    u = np.asarray(u, dtype=np.float64)
    if np.any(np.isnan(u)):
        raise NumericFaultError("NaN membrane potential")
    z = 0.5 * np.pi * sharpness * (u - v_theta)
    return ARCTAN_NORMALIZATION * sharpness / (1.0 + z * z)


def exact_grad_reference(u, gamma) -> np.ndarray:
    """Exact derivative of ``gamma * floor(u / gamma)``.

    Zero off the boundary set and ``BOUNDARY_SENTINEL`` where ``u / gamma`` is
    an integer to within a few ulps. Only useful to show why a surrogate is
    needed.
    """
    u, g = _validate(u, gamma, 1)
    r = u / g
    nearest = np.rint(r)
    tol = 4 * np.spacing(np.maximum(np.abs(r), 1.0))
    # ratios like 0.3333 / 0.1111 are integral only to the digits given
    on_boundary = np.abs(r - nearest) <= np.maximum(tol, 1e-9 * np.abs(r))
    return np.where(on_boundary, BOUNDARY_SENTINEL, 0.0)


def level_derivative(u, surrogate: Surrogate, cfg) -> np.ndarray:
    """d(level)/du for a neuron config under the chosen surrogate."""
    from .neurons import NeuronKind

    kind = surrogate.kind
    if kind is SurrogateKind.EXACT_REFERENCE:
        raise ValueError("the exact derivative cannot drive training; pick a surrogate")
    if cfg.kind is NeuronKind.BINARY_LIF:
        if kind is SurrogateKind.RELSG_ET:
            return relsg_et(u, cfg.v_theta, 1)
        if kind is SurrogateKind.BOX_ET:
            return binary_box(u, cfg.v_theta)
        return arctan_surrogate(u, cfg.v_theta, surrogate.arctan_sharpness)
    gamma = cfg.effective_gamma
    if kind is SurrogateKind.RELSG_ET:
        return relsg_et(u, gamma, cfg.n_max)
    if kind is SurrogateKind.BOX_ET:
        return box_et(u, gamma, cfg.n_max)
    return arctan_surrogate(u, gamma, surrogate.arctan_sharpness)
