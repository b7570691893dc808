"""Slope-based causal direction for monotone deterministic relations on [0, 1].

A monotone ``f`` drawn on an ``l x l`` grid with a pen of half-width ``w``
grid units gives a relation whose column counts ``N_X`` and row counts
``N_Y`` encode the slope: ``N_X(x) / N_Y(f(x))`` approximates ``f'(x)``.
Comparing the likelihoods of causal PIR in the two directions then reduces
to comparing ``sum log N_X`` with ``sum log N_Y``, whose continuous limit is
the sign of ``sum log f'(x_j)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import DomainError, FiniteDomain, Relation

CHECK_POINTS = 1001
DERIV_H = 1e-5
DERIV_TOL = 1e-4
DEFAULT_PEN_WIDTH = 3.0
LIMIT_GRIDS = (64, 128, 256, 512)


class ResolutionError(DomainError):
    """The pen is too thin for the grid: some row or column is empty."""


def _bisect_inverse(f: Callable[[float], float], y: float, tol: float = 1e-12) -> float:
    lo, hi = 0.0, 1.0
    if y <= f(lo):
        return lo
    if y >= f(hi):
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) < y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class MonotoneFunction:
    """Strictly increasing bijection of [0, 1] with its derivative.

    ``inverse`` and ``inverse_derivative`` are optional; the inverse falls
    back to bisection and its derivative to ``1 / f'(f^-1(y))``.
    """

    f: Callable[[float], float]
    derivative: Callable[[float], float]
    name: str = "f"
    inverse: Callable[[float], float] | None = None
    inverse_derivative: Callable[[float], float] | None = None
    kinks: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        xs = np.linspace(0.0, 1.0, CHECK_POINTS)
        ys = np.array([self.f(x) for x in xs])
        if abs(ys[0]) > 1e-12 or abs(ys[-1] - 1.0) > 1e-12:
            raise DomainError(f"{self.name}: expected f(0)=0 and f(1)=1")
        if not np.all(np.diff(ys) > 0):
            raise DomainError(f"{self.name}: not strictly increasing on the check grid")
        for x in xs[1:-1]:
            if any(abs(x - k) <= 2 * DERIV_H for k in self.kinks):
                continue
            fd = (self.f(x + DERIV_H) - self.f(x - DERIV_H)) / (2 * DERIV_H)
            # relative beyond unit slope: the difference quotient itself has O(h^2 f''') error
            if abs(self.derivative(x) - fd) > DERIV_TOL * max(1.0, abs(fd)):
                raise DomainError(f"{self.name}: derivative disagrees with finite differences at x={x}")

    def __call__(self, x: float) -> float:
        return self.f(x)

    def inv(self, y: float) -> float:
        return self.inverse(y) if self.inverse is not None else _bisect_inverse(self.f, y)

    def inv_derivative(self, y: float) -> float:
        if self.inverse_derivative is not None:
            return self.inverse_derivative(y)
        return 1.0 / self.derivative(self.inv(y))

    def inverted(self) -> "MonotoneFunction":
        return MonotoneFunction(self.inv, self.inv_derivative, f"inverse of {self.name}",
                                self.f, self.derivative, tuple(self.f(k) for k in self.kinks))


def identity() -> MonotoneFunction:
    return MonotoneFunction(lambda x: x, lambda x: 1.0, "identity", lambda y: y, lambda y: 1.0)


def square() -> MonotoneFunction:
    return MonotoneFunction(lambda x: x * x, lambda x: 2.0 * x, "square",
                            math.sqrt, lambda y: 0.5 / math.sqrt(y) if y > 0 else math.inf)


def scaled_exponential() -> MonotoneFunction:
    """``(e^x - 1) / (e - 1)``."""
    c = math.e - 1.0
    return MonotoneFunction(lambda x: math.expm1(x) / c, lambda x: math.exp(x) / c, "scaled-exponential",
                            lambda y: math.log1p(c * y), lambda y: c / (1.0 + c * y))


BUILTINS: dict[str, Callable[[], MonotoneFunction]] = {
    "identity": identity,
    "square": square,
    "scaled-exponential": scaled_exponential,
}


def piecewise_linear(knots: Sequence[Sequence[float]]) -> MonotoneFunction:
    """Monotone interpolation of ``(x, y)`` knots from (0, 0) to (1, 1); slopes are secants."""
    pts = np.array(knots, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise DomainError("knots must be a list of (x, y) pairs")
    xs, ys = pts[:, 0], pts[:, 1]
    if not (np.all(np.diff(xs) > 0) and np.all(np.diff(ys) > 0)):
        raise DomainError("knots must be strictly increasing in x and y")
    slopes = np.diff(ys) / np.diff(xs)

    def f(x):
        return float(np.interp(x, xs, ys))

    def df(x):
        i = int(np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(slopes) - 1))
        return float(slopes[i])

    def finv(y):
        return float(np.interp(y, ys, xs))

    def dfinv(y):
        i = int(np.clip(np.searchsorted(ys, y, side="right") - 1, 0, len(slopes) - 1))
        return float(1.0 / slopes[i])

    return MonotoneFunction(f, df, "piecewise-linear", finv, dfinv, tuple(xs[1:-1]))


@dataclass
class FatPenRelation:
    grid: int
    pen_width: float
    member: np.ndarray  # bool (grid, grid), indexed [x, y]
    n_x: np.ndarray  # options per column
    n_y: np.ndarray  # options per row

    def __contains__(self, point) -> bool:
        i, j = point
        return 0 <= i < self.grid and 0 <= j < self.grid and bool(self.member[i, j])

    def size(self) -> int:
        return int(self.member.sum())

    def transpose(self) -> "FatPenRelation":
        return FatPenRelation(self.grid, self.pen_width, self.member.T.copy(), self.n_y.copy(), self.n_x.copy())

    def relation(self) -> Relation:
        domain = FiniteDomain([("X", tuple(range(self.grid))), ("Y", tuple(range(self.grid)))])
        return Relation.from_mask(domain, self.member)


def fat_pen(f: MonotoneFunction, grid: int, pen_width: float = DEFAULT_PEN_WIDTH) -> FatPenRelation:
    """Grid points within ``pen_width / grid`` of the graph vertically or horizontally."""
    if grid < 16:
        raise DomainError("grid must have at least 16 points per axis")
    if pen_width <= 0:
        raise DomainError("pen width must be positive")
    coords = np.arange(grid) / grid
    half = pen_width / grid + 1e-12
    fx = np.array([f(x) for x in coords])
    finv_y = np.array([f.inv(y) for y in coords])
    vertical = np.abs(coords[None, :] - fx[:, None]) <= half
    horizontal = np.abs(coords[:, None] - finv_y[None, :]) <= half
    member = vertical | horizontal
    n_x = member.sum(axis=1)
    n_y = member.sum(axis=0)
    if np.any(n_x == 0) or np.any(n_y == 0):
        raise ResolutionError(f"pen width {pen_width} leaves empty rows or columns on a {grid} grid")
    return FatPenRelation(grid, pen_width, member, n_x, n_y)


def snap(value: float, grid: int) -> int:
    """Nearest grid index for a coordinate in [0, 1]; exact halves go to the lower index."""
    t = value * grid
    lo = math.floor(t)
    idx = lo if t - lo <= 0.5 else lo + 1
    return int(min(max(idx, 0), grid - 1))


@dataclass(frozen=True)
class PirScore:
    sum_log_nx: float
    sum_log_ny: float
    direction: str  # "X->Y", "Y->X" or "tie"


def discrete_pir_score(rel: FatPenRelation, samples: Sequence[Sequence[int]]) -> PirScore:
    """Causal-PIR direction call on grid samples: X->Y iff prod N_X < prod N_Y."""
    prod_x, prod_y = 1, 1
    for s in samples:
        i, j = int(s[0]), int(s[1])
        if (i, j) not in rel:
            raise DomainError(f"sample {(i, j)} lies outside the fat-pen relation")
        prod_x *= int(rel.n_x[i])
        prod_y *= int(rel.n_y[j])
    if prod_x < prod_y:
        d = "X->Y"
    elif prod_y < prod_x:
        d = "Y->X"
    else:
        d = "tie"
    return PirScore(math.log(prod_x), math.log(prod_y), d)


@dataclass(frozen=True)
class IgciScore:
    score: float
    direction: str


def igci_score(f: MonotoneFunction, xs: Sequence[float]) -> IgciScore:
    """Mean of ``log f'(x_j)``; negative favours X->Y."""
    if len(xs) == 0:
        raise DomainError("no samples")
    logs = []
    for x in xs:
        d = f.derivative(float(x))
        if not d > 0:
            raise DomainError(f"f' is not positive at x={x}")
        logs.append(math.log(d))
    s = math.fsum(logs) / len(logs)
    return IgciScore(s, "X->Y" if s < 0 else "Y->X" if s > 0 else "tie")


def reverse_igci_score(f: MonotoneFunction, xs: Sequence[float]) -> float:
    """``-(1/n) sum log (f^-1)'(f(x_j))``; equals the forward score for exact inverses."""
    logs = [math.log(f.inv_derivative(f(float(x)))) for x in xs]
    return -math.fsum(logs) / len(logs)


def default_limit_pen_width(grid: int) -> float:
    """Pen half-width ``2 sqrt(grid)`` grid units: counts grow while the band narrows in [0, 1]."""
    return max(DEFAULT_PEN_WIDTH, 2.0 * math.sqrt(grid))


@dataclass
class LimitReport:
    grids: list[int]
    pen_widths: list[float]
    deviations: list[float]

    @property
    def decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.deviations, self.deviations[1:]))


def limit_consistency(f: MonotoneFunction, xs: Sequence[float], grids: Sequence[int] = LIMIT_GRIDS,
                      pen_width: Callable[[int], float] | float | None = None) -> LimitReport:
    """Distance between the discrete PIR score and the IGCI score as the grid refines."""
    if pen_width is None:
        width_of = default_limit_pen_width
    elif callable(pen_width):
        width_of = pen_width
    else:
        width_of = lambda _g: float(pen_width)  # noqa: E731
    target = igci_score(f, xs).score
    widths, devs = [], []
    for g in grids:
        w = width_of(g)
        rel = fat_pen(f, g, w)
        samples = [(snap(x, g), snap(f(x), g)) for x in xs]
        score = discrete_pir_score(rel, samples)
        devs.append(abs((score.sum_log_nx - score.sum_log_ny) / len(xs) - target))
        widths.append(w)
    return LimitReport(list(grids), widths, devs)
