"""Rotation kernels and the two rotary embedding maps.

All angles are radians; canonical angles live in [0, 2*pi). A vector of
length 2*p is treated as p consecutive 2D pairs (x[2l], x[2l+1]). The
embedding maps rotate each pair in place and never materialize the
block-diagonal rotation matrix, so they allocate nothing beyond the output.

Two embeddings are provided:

* ``rope_embed`` rotates pair l by ``m * freqs[l]`` for a scalar position m,
  so relative positions appear implicitly in QK dot products.
* ``drope_embed`` rotates every pair by the same heading angle, which keeps
  the dot product a function of the wrapped relative angle only.

2D positions are handled by ``rope_embed_planar``: the pair axis is split
into two halves, the first encoding x and the second encoding y, each half
consuming the leading entries of the frequency schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionMismatchError, InvalidArgumentError

__all__ = [
    "TWO_PI",
    "Angle",
    "FrequencySchedule",
    "wrap_angle",
    "relative_angle",
    "rotate2d",
    "rotate_pairs",
    "rope_embed",
    "rope_embed_planar",
    "drope_embed",
    "planar_pair_angles",
]

TWO_PI = 2.0 * math.pi


def wrap_angle(theta):
    """Wrap angles into [0, 2*pi) with floored-modulo semantics.

    Works on scalars and arrays; negative inputs land in the upper part of
    the range, so ``wrap_angle(-eps) == 2*pi - eps``.
    """
    wrapped = np.mod(theta, TWO_PI)
    # adding 2*pi to a tiny negative remainder can round up to exactly 2*pi
    wrapped = np.where(wrapped >= TWO_PI, 0.0, wrapped)
    if np.ndim(theta) == 0:
        return float(wrapped)
    return wrapped


def _angle_value(theta) -> float:
    """Extract a finite float angle from an Angle, float, or numpy scalar."""
    value = float(theta)
    if not math.isfinite(value):
        raise InvalidArgumentError(f"angle must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class Angle:
    """An angle canonicalized to [0, 2*pi) on construction and arithmetic."""

    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", wrap_angle(_angle_value(self.value)))

    def __add__(self, other) -> "Angle":
        return Angle(self.value + _angle_value(other))

    def __sub__(self, other) -> "Angle":
        return Angle(self.value - _angle_value(other))

    def __float__(self) -> float:
        return self.value


def relative_angle(a, b) -> Angle:
    """Wrapped difference a - b, the relative angle between two headings."""
    return Angle(_angle_value(a) - _angle_value(b))


@dataclass(frozen=True)
class FrequencySchedule:
    """Per-pair rotation frequencies for the position embedding.

    ``d_k`` is the number of 2D pairs. The default schedule is
    ``freqs[l] = 10000 ** (-l / d_k)``; ``freqs[0]`` is exactly 1.
    """

    d_k: int
    freqs: np.ndarray

    def __post_init__(self):
        if self.d_k < 1:
            raise ConfigurationError(f"d_k must be a positive integer, got {self.d_k}")
        freqs = np.asarray(self.freqs, dtype=np.float64)
        if freqs.shape != (self.d_k,):
            raise DimensionMismatchError(
                f"expected {self.d_k} frequencies, got shape {freqs.shape}"
            )
        if not np.all(np.isfinite(freqs)) or np.any(freqs <= 0.0):
            raise InvalidArgumentError("frequencies must be finite and positive")
        object.__setattr__(self, "freqs", freqs)

    @classmethod
    def default(cls, d_k: int) -> "FrequencySchedule":
        # scalar pow keeps the values bitwise equal to the closed form
        freqs = np.array([10000.0 ** (-l / d_k) for l in range(d_k)])
        return cls(d_k, freqs)


def rotate2d(theta) -> np.ndarray:
    """2x2 counterclockwise rotation matrix [[c, -s], [s, c]].

    Canonicalization is not required; rotation is periodic in the input.
    """
    t = _angle_value(theta)
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s], [s, c]])


def rotate_pairs(x, angles) -> np.ndarray:
    """Rotate each consecutive 2D pair along the last axis of ``x``.

    ``x`` has shape (..., 2*p); ``angles`` must broadcast against
    (..., p). Per-pair Euclidean norms are preserved exactly up to rounding.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] % 2 != 0:
        raise DimensionMismatchError(f"pair vector length must be even, got {x.shape[-1]}")
    angles = np.asarray(angles, dtype=np.float64)
    even = x[..., 0::2]
    odd = x[..., 1::2]
    c = np.cos(angles)
    s = np.sin(angles)
    r_even = even * c - odd * s
    r_odd = even * s + odd * c
    out = np.empty(r_even.shape[:-1] + (x.shape[-1],), dtype=np.float64)
    out[..., 0::2] = r_even
    out[..., 1::2] = r_odd
    return out


def rope_embed(x, m, sched: FrequencySchedule) -> np.ndarray:
    """Embed a scalar position by rotating pair l of ``x`` by ``m * freqs[l]``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != 2 * sched.d_k:
        raise DimensionMismatchError(
            f"vector length {x.shape[-1]} does not match 2*d_k = {2 * sched.d_k}"
        )
    m = float(m)
    if not math.isfinite(m):
        raise InvalidArgumentError(f"position must be finite, got {m!r}")
    return rotate_pairs(x, m * sched.freqs)


def drope_embed(x, theta, freqs=None) -> np.ndarray:
    """Embed a heading by rotating every 2D pair of ``x`` by the same angle.

    ``freqs`` deliberately reintroduces per-pair frequencies so the
    verification suite can demonstrate why they break angle periodicity;
    leave it None for the real embedding.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] % 2 != 0:
        raise DimensionMismatchError(f"vector length must be even, got {x.shape[-1]}")
    t = _angle_value(theta)
    p = x.shape[-1] // 2
    if freqs is None:
        angles = np.full(p, t)
    else:
        freqs = np.asarray(freqs, dtype=np.float64)
        if freqs.shape[-1] < p:
            raise DimensionMismatchError(
                f"need at least {p} frequencies, got {freqs.shape[-1]}"
            )
        angles = t * freqs[:p]
    return rotate_pairs(x, angles)


def planar_pair_angles(positions, n_pairs: int, freqs) -> np.ndarray:
    """Per-pair rotation angles encoding 2D positions across ``n_pairs`` pairs.

    The first ceil(n_pairs / 2) pairs encode the x coordinate and the rest
    encode y; both axes consume the leading entries of ``freqs`` so they get
    identical frequency treatment.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape[-1] != 2:
        raise DimensionMismatchError(
            f"positions must have a trailing axis of size 2, got {positions.shape}"
        )
    freqs = np.asarray(freqs, dtype=np.float64)
    h1 = (n_pairs + 1) // 2
    if freqs.shape[-1] < h1:
        raise DimensionMismatchError(
            f"need at least {h1} frequencies for {n_pairs} pairs, got {freqs.shape[-1]}"
        )
    angles = np.empty(positions.shape[:-1] + (n_pairs,), dtype=np.float64)
    angles[..., :h1] = positions[..., :1] * freqs[:h1]
    angles[..., h1:] = positions[..., 1:2] * freqs[: n_pairs - h1]
    return angles


def rope_embed_planar(x, position, sched: FrequencySchedule) -> np.ndarray:
    """Position embedding for a 2D position via the axis-split convention."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != 2 * sched.d_k:
        raise DimensionMismatchError(
            f"vector length {x.shape[-1]} does not match 2*d_k = {2 * sched.d_k}"
        )
    return rotate_pairs(x, planar_pair_angles(position, sched.d_k, sched.freqs))
