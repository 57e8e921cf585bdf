"""Bernstein basis, Bezier curve evaluation/derivatives and their adjoints.

Everything here is double precision and side-effect free.  Vectorised helpers
(``basis``, ``basis_derivative``, ``basis_second_derivative``) accept arrays of
parameters and are what the rest of the package uses on hot paths; the scalar
functions mirror the textbook definitions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAX_DEGREE = 20
_BINOM = [np.array([math.comb(n, i) for i in range(n + 1)], dtype=np.float64) for n in range(MAX_DEGREE + 1)]


class BezierError(ValueError):
    """Invalid curve definition or basis index."""


def _check_degree(n: int) -> None:
    if n < 0 or n > MAX_DEGREE:
        raise BezierError(f"degree {n} outside supported range [0, {MAX_DEGREE}]")


def _check_index(i: int, n: int) -> None:
    _check_degree(n)
    if i < 0 or i > n:
        raise BezierError(f"basis index {i} invalid for degree {n}")


def bernstein(i: int, n: int, t):
    """b_{i,n}(t) = C(n,i) t^i (1-t)^(n-i)."""
    _check_index(i, n)
    t = np.asarray(t, dtype=np.float64)
    out = _BINOM[n][i] * t**i * (1.0 - t) ** (n - i)
    return float(out) if out.ndim == 0 else out


def bernstein_derivative(i: int, n: int, t):
    """d b_{i,n} / dt.

    Equal to C(n,i) (i - n t) t^(i-1) (1-t)^(n-i-1) in the interior; the
    endpoint exponents that would produce 0^-1 are replaced by their
    polynomial limits, e.g. (0, n, 0) -> -n.
    """
    _check_index(i, n)
    t = np.asarray(t, dtype=np.float64)
    if n == 0:
        out = np.zeros_like(t)
    elif i == 0:
        out = -n * (1.0 - t) ** (n - 1)
    elif i == n:
        out = n * t ** (n - 1)
    else:
        out = _BINOM[n][i] * (i - n * t) * t ** (i - 1) * (1.0 - t) ** (n - i - 1)
    return float(out) if out.ndim == 0 else out


def basis(n: int, t) -> np.ndarray:
    """All degree-n Bernstein polynomials at ``t``; shape ``t.shape + (n+1,)``."""
    _check_degree(n)
    t = np.asarray(t, dtype=np.float64)[..., None]
    i = np.arange(n + 1)
    return _BINOM[n] * t**i * (1.0 - t) ** (n - i)


def basis_derivative(n: int, t) -> np.ndarray:
    """First derivatives of the degree-n basis, via n (b_{i-1,n-1} - b_{i,n-1})."""
    _check_degree(n)
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros(t.shape + (n + 1,))
    if n == 0:
        return out
    low = basis(n - 1, t)
    out[..., 1:] += low
    out[..., :-1] -= low
    return n * out


def basis_second_derivative(n: int, t) -> np.ndarray:
    _check_degree(n)
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros(t.shape + (n + 1,))
    if n < 2:
        return out
    low = basis(n - 2, t)
    out[..., 2:] += low
    out[..., 1:-1] -= 2.0 * low
    out[..., :-2] += low
    return n * (n - 1) * out


@dataclass(frozen=True)
class BezierCurve:
    """Degree-n curve in d dimensions defined by n+1 control points."""

    control_points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.control_points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] < 1:
            raise BezierError(f"control points must be (n+1, d) with n >= 1, got shape {pts.shape}")
        _check_degree(pts.shape[0] - 1)
        if not np.all(np.isfinite(pts)):
            raise BezierError("control points must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "control_points", pts)

    @property
    def degree(self) -> int:
        return self.control_points.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.control_points.shape[1]

    def __call__(self, t):
        return evaluate(self, t)

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "dim": self.dim,
            "control_points": [[float(v) for v in row] for row in self.control_points],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "BezierCurve":
        curve = cls(np.array(data["control_points"], dtype=np.float64))
        if curve.degree != int(data["degree"]) or curve.dim != int(data["dim"]):
            raise BezierError("degree/dim fields disagree with control_points")
        return curve

    @classmethod
    def from_json(cls, text: str) -> "BezierCurve":
        return cls.from_dict(json.loads(text))


def evaluate(curve: BezierCurve, t):
    """Point(s) on the curve; ``t`` may be scalar or an array."""
    return basis(curve.degree, t) @ curve.control_points


def derivative(curve: BezierCurve, t):
    return basis_derivative(curve.degree, t) @ curve.control_points


def second_derivative(curve: BezierCurve, t):
    return basis_second_derivative(curve.degree, t) @ curve.control_points


def evaluate_adjoint(curve: BezierCurve, t: float, cotangent) -> tuple[np.ndarray, float]:
    """Reverse-mode of ``evaluate`` at a scalar ``t``.

    Returns ``(d_control_points, d_t)`` where ``d_control_points[i]`` is
    ``b_i(t) * cotangent``.
    """
    c = np.asarray(cotangent, dtype=np.float64).reshape(curve.dim)
    d_points = basis(curve.degree, t)[:, None] * c[None, :]
    d_t = float(c @ derivative(curve, t))
    return d_points, d_t


@dataclass(frozen=True)
class PiecewiseBezier:
    segments: tuple[BezierCurve, ...]
    boundaries: tuple[float, ...]

    def __init__(self, segments: Sequence[BezierCurve], boundaries: Sequence[float], continuity_tol: float = 1e-9):
        segments = tuple(segments)
        boundaries = tuple(float(b) for b in boundaries)
        if not segments:
            raise BezierError("piecewise curve needs at least one segment")
        if len(boundaries) != len(segments) + 1:
            raise BezierError("need len(segments) + 1 boundaries")
        if boundaries[0] != 0.0 or boundaries[-1] != 1.0:
            raise BezierError("boundaries must start at 0 and end at 1")
        if any(b1 <= b0 for b0, b1 in zip(boundaries, boundaries[1:])):
            raise BezierError("boundaries must be strictly increasing")
        if len({s.dim for s in segments}) != 1:
            raise BezierError("segments must share dimension")
        for k, (a, b) in enumerate(zip(segments, segments[1:])):
            gap = np.max(np.abs(a.control_points[-1] - b.control_points[0]))
            if gap > continuity_tol:
                raise BezierError(f"segments {k} and {k + 1} are not C0-continuous (gap {gap:.3g})")
        object.__setattr__(self, "segments", segments)
        object.__setattr__(self, "boundaries", boundaries)

    @property
    def dim(self) -> int:
        return self.segments[0].dim


def evaluate_piecewise(pw: PiecewiseBezier, t: float) -> tuple[np.ndarray, bool]:
    """Evaluate at global parameter ``t``; returns ``(point, clamped)``."""
    clamped = not (0.0 <= t <= 1.0)
    t = min(max(float(t), 0.0), 1.0)
    k = int(np.searchsorted(pw.boundaries, t, side="right")) - 1
    k = min(max(k, 0), len(pw.segments) - 1)
    lo, hi = pw.boundaries[k], pw.boundaries[k + 1]
    return evaluate(pw.segments[k], (t - lo) / (hi - lo)), clamped
