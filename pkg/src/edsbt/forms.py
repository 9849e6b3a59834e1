"""Exterior algebra of differential forms on a coordinate chart.

Forms carry sparse symbolic coefficients indexed by strictly increasing
coordinate tuples.  Wedge, exterior derivative, interior product, and Lie
derivative are exact; membership and slot questions are decided pointwise by
linear algebra on coefficient vectors, quantified over random samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import expr as ex
from .expr import CheckResult, Expr, Point, SampleSpec

COND_LIMIT = 1e8
RANK_CUTOFF = 1e-10


class ChartMismatchError(ValueError):
    pass


class SingularCoframeError(RuntimeError):
    """Coframe matrix condition number exceeded COND_LIMIT at a point."""


@dataclass(frozen=True, eq=True)
class Chart:
    """Ordered coordinates with a sampling box and named parameters.

    `params` values are either fixed floats or (lo, hi) ranges sampled per
    point; `guard` is the default minimum size for denominators and ln/sqrt
    arguments during evaluation.
    """

    coords: tuple
    box: Mapping[str, tuple] = field(default_factory=dict)
    params: Mapping[str, object] = field(default_factory=dict)
    guard: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(self.coords))
        if len(self.coords) < 2:
            raise ValueError("need at least two coordinates")
        if len(set(self.coords)) != len(self.coords):
            raise ValueError("coordinate names must be distinct")
        overlap = set(self.coords) & set(self.params)
        if overlap:
            raise ValueError(f"names both coordinate and parameter: {sorted(overlap)}")
        missing = [c for c in self.coords if c not in self.box]
        if missing:
            raise ValueError(f"box missing intervals for {missing}")

    @property
    def dim(self) -> int:
        return len(self.coords)

    def index(self, name: str) -> int:
        return self.coords.index(name)

    def parse(self, text: str) -> Expr:
        return ex.parse(text, self.coords, self.params.keys())

    def sample_spec(self, **overrides) -> SampleSpec:
        base = dict(
            box=self.box, params=self.params, guard=self.guard
        )
        base.update(overrides)
        return SampleSpec(**base)


def resolve_spec(chart: Chart, spec: Optional[SampleSpec]) -> SampleSpec:
    """Fill a spec's empty box/params from the chart so sampling can run."""
    if spec is None:
        return chart.sample_spec()
    box = spec.box if spec.box else chart.box
    params = dict(chart.params)
    params.update(spec.params)
    return spec.replace(box=box, params=params)


@lru_cache(maxsize=None)
def basis_tuples(n: int, k: int) -> tuple:
    """Strictly increasing index tuples: the degree-k wedge basis order."""
    return tuple(combinations(range(n), k))


def _merge_sign(t1: tuple, t2: tuple):
    merged = t1 + t2
    if len(set(merged)) != len(merged):
        return None, 0
    # parity of the sort permutation via inversion count (tuples are tiny)
    inversions = 0
    for i in range(len(merged)):
        for j in range(i + 1, len(merged)):
            if merged[i] > merged[j]:
                inversions += 1
    return tuple(sorted(merged)), (-1 if inversions % 2 else 1)


class DifferentialForm:
    """Degree-k form: sparse map from increasing index tuples to Expr."""

    __slots__ = ("chart", "degree", "coeffs")

    def __init__(self, chart: Chart, degree: int, coeffs: Mapping[tuple, Expr]):
        if degree < 0 or degree > chart.dim:
            raise ValueError(f"degree {degree} out of range")
        clean = {}
        for t, c in coeffs.items():
            t = tuple(t)
            if len(t) != degree or list(t) != sorted(set(t)):
                raise ValueError(f"index tuple {t} not strictly increasing length {degree}")
            if not (t == () or 0 <= t[0] and t[-1] < chart.dim):
                raise ValueError(f"index tuple {t} outside chart")
            if not isinstance(c, Expr):
                c = ex._coerce(c)
            if c == ex.ZERO:
                continue
            clean[t] = c
        self.chart = chart
        self.degree = degree
        self.coeffs = clean

    @classmethod
    def zero(cls, chart: Chart, degree: int) -> "DifferentialForm":
        return cls(chart, degree, {})

    @classmethod
    def function(cls, chart: Chart, f: Expr) -> "DifferentialForm":
        return cls(chart, 0, {(): f})

    def is_zero(self) -> bool:
        return not self.coeffs

    def __eq__(self, other):
        return (
            isinstance(other, DifferentialForm)
            and self.chart == other.chart
            and self.degree == other.degree
            and self.coeffs == other.coeffs
        )

    def __add__(self, other):
        _same_chart(self, other)
        if self.degree != other.degree:
            raise ValueError("degree mismatch in sum")
        out = dict(self.coeffs)
        for t, c in other.coeffs.items():
            out[t] = ex.add(out[t], c) if t in out else c
        return DifferentialForm(self.chart, self.degree, out)

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return DifferentialForm(
            self.chart, self.degree, {t: ex.neg(c) for t, c in self.coeffs.items()}
        )

    def __mul__(self, scalar):
        s = scalar if isinstance(scalar, Expr) else ex._coerce(scalar)
        return DifferentialForm(
            self.chart, self.degree, {t: ex.mul(s, c) for t, c in self.coeffs.items()}
        )

    __rmul__ = __mul__

    def __repr__(self):
        if not self.coeffs:
            return f"<{self.degree}-form 0>"
        names = self.chart.coords
        parts = []
        for t in sorted(self.coeffs):
            mono = "^".join(f"d{names[i]}" for i in t) or "1"
            parts.append(f"({self.coeffs[t]}) {mono}")
        return f"<{self.degree}-form {' + '.join(parts)}>"


def _same_chart(a, b):
    if a.chart != b.chart:
        raise ChartMismatchError("forms live on different charts")


def d_coord(chart: Chart, name: str) -> DifferentialForm:
    """The coordinate differential, e.g. dx."""
    return DifferentialForm(chart, 1, {(chart.index(name),): ex.ONE})


def one_form(chart: Chart, coeff_by_name: Mapping[str, Expr]) -> DifferentialForm:
    return DifferentialForm(
        chart,
        1,
        {(chart.index(n),): c for n, c in coeff_by_name.items()},
    )


@dataclass(frozen=True)
class VectorField:
    chart: Chart
    components: tuple  # one Expr per coordinate

    def __post_init__(self):
        comps = tuple(
            c if isinstance(c, Expr) else ex._coerce(c) for c in self.components
        )
        if len(comps) != self.chart.dim:
            raise ValueError("component count must match chart dimension")
        object.__setattr__(self, "components", comps)

    @classmethod
    def coordinate(cls, chart: Chart, name: str) -> "VectorField":
        comps = [ex.ZERO] * chart.dim
        comps[chart.index(name)] = ex.ONE
        return cls(chart, tuple(comps))


def wedge(a: DifferentialForm, b: DifferentialForm) -> DifferentialForm:
    _same_chart(a, b)
    k = a.degree + b.degree
    if k > a.chart.dim:
        raise ValueError("wedge degree exceeds chart dimension")
    out: dict = {}
    for t1, c1 in a.coeffs.items():
        for t2, c2 in b.coeffs.items():
            merged, sign = _merge_sign(t1, t2)
            if sign == 0:
                continue
            term = ex.mul(c1, c2)
            if sign < 0:
                term = ex.neg(term)
            out[merged] = ex.add(out[merged], term) if merged in out else term
    return DifferentialForm(a.chart, k, out)


def exterior_derivative(a: DifferentialForm) -> DifferentialForm:
    if a.degree >= a.chart.dim:
        raise ValueError("cannot take d of a top-degree form")
    chart = a.chart
    out: dict = {}
    for t, c in a.coeffs.items():
        names = c.names()
        for i, coord in enumerate(chart.coords):
            if coord not in names or i in t:
                continue
            dc = ex.differentiate(c, coord)
            if dc == ex.ZERO:
                continue
            merged, sign = _merge_sign((i,), t)
            term = dc if sign > 0 else ex.neg(dc)
            out[merged] = ex.add(out[merged], term) if merged in out else term
    return DifferentialForm(chart, a.degree + 1, out)


def interior_product(X: VectorField, a: DifferentialForm) -> DifferentialForm:
    if X.chart != a.chart:
        raise ChartMismatchError("vector field and form live on different charts")
    if a.degree < 1:
        raise ValueError("interior product needs degree >= 1")
    out: dict = {}
    for t, c in a.coeffs.items():
        for pos, idx in enumerate(t):
            comp = X.components[idx]
            if comp == ex.ZERO:
                continue
            term = ex.mul(comp, c)
            if pos % 2:
                term = ex.neg(term)
            rest = t[:pos] + t[pos + 1 :]
            out[rest] = ex.add(out[rest], term) if rest in out else term
    return DifferentialForm(a.chart, a.degree - 1, out)


def lie_derivative(X: VectorField, a: DifferentialForm) -> DifferentialForm:
    """Cartan formula i_X(da) + d(i_X a)."""
    if X.chart != a.chart:
        raise ChartMismatchError("vector field and form live on different charts")
    pieces = []
    if a.degree < a.chart.dim:
        pieces.append(interior_product(X, exterior_derivative(a)))
    if a.degree >= 1:
        inner = interior_product(X, a)
        if inner.degree < a.chart.dim:
            pieces.append(exterior_derivative(inner))
    if not pieces:
        return DifferentialForm.zero(a.chart, a.degree)
    total = pieces[0]
    for p in pieces[1:]:
        total = total + p
    return total


# ---------------------------------------------------------------------------
# pointwise numerics


def evaluate_coefficients(a: DifferentialForm, env: Mapping, guard: Optional[float] = None) -> dict:
    """Evaluated coefficient per stored tuple; env values may be arrays."""
    return {t: ex.evaluate(c, env, guard) for t, c in a.coeffs.items()}


def coefficients_at(a: DifferentialForm, pt: Point, guard: Optional[float] = None) -> np.ndarray:
    """Numeric coefficient vector in the coordinate wedge basis.

    Ordered by `basis_tuples(chart.dim, degree)`, length C(n, k).
    """
    basis = basis_tuples(a.chart.dim, a.degree)
    index = {t: i for i, t in enumerate(basis)}
    out = np.zeros(len(basis))
    env = pt.env()
    for t, c in a.coeffs.items():
        out[index[t]] = ex.evaluate(c, env, guard)
    return out


def coefficient_index(chart: Chart, degree: int) -> dict:
    return {t: i for i, t in enumerate(basis_tuples(chart.dim, degree))}


def coframe_matrix_at(coframe: Sequence[DifferentialForm], pt: Point, guard=None) -> np.ndarray:
    """S[i, j] = coefficient of the j-th coordinate differential in coframe[i]."""
    n = coframe[0].chart.dim
    if len(coframe) != n:
        raise ValueError("coframe must contain n one-forms")
    S = np.zeros((n, n))
    env = pt.env()
    for i, w in enumerate(coframe):
        if w.degree != 1:
            raise ValueError("coframe entries must be 1-forms")
        for t, c in w.coeffs.items():
            S[i, t[0]] = ex.evaluate(c, env, guard)
    return S


def wedge_basis_matrix(S: np.ndarray, k: int) -> np.ndarray:
    """A[U, T] = det S[T, U]: coordinates of the coframe wedge basis.

    Columns follow `basis_tuples(n, k)` over coframe indices T, rows the same
    tuples over coordinate indices U; solves a = sum_T c_T sigma_T.
    """
    n = S.shape[0]
    basis = basis_tuples(n, k)
    m = len(basis)
    A = np.empty((m, m))
    for col, T in enumerate(basis):
        sub = S[np.ix_(T, range(n))]
        for row, U in enumerate(basis):
            A[row, col] = np.linalg.det(sub[:, U])
    return A


def coframe_coefficients_at(
    a: DifferentialForm,
    coframe: Sequence[DifferentialForm],
    pt: Point,
    guard: Optional[float] = None,
) -> np.ndarray:
    """Expand `a` in the wedge basis generated by `coframe` at one point.

    Result is ordered by `basis_tuples(n, degree)` over coframe indices.
    Raises SingularCoframeError when the coframe matrix has condition number
    above COND_LIMIT.
    """
    S = coframe_matrix_at(coframe, pt, guard)
    if np.linalg.cond(S) > COND_LIMIT:
        raise SingularCoframeError(f"coframe singular at {pt.flat()}")
    if a.degree == 0:
        return coefficients_at(a, pt, guard)
    v = coefficients_at(a, pt, guard)
    A = wedge_basis_matrix(S, a.degree)
    return np.linalg.solve(A, v)


def ideal_contains(
    target: DifferentialForm,
    generators: Iterable[DifferentialForm],
    spec: Optional[SampleSpec] = None,
) -> CheckResult:
    """Pointwise span test: is `target` in the algebraic ideal of the
    generators at every sample?

    Builds, per generator g, the forms g ^ (each coordinate wedge monomial
    of complementary degree), and asks whether target's coefficient vector
    lies in their span, by least squares with relative residual tolerance.
    """
    generators = list(generators)
    chart = target.chart
    for g in generators:
        _same_chart(target, g)
    spec = resolve_spec(chart, spec)

    columns = []
    k = target.degree
    for g in generators:
        if g.is_zero() or g.degree > k:
            continue
        comp = k - g.degree
        if comp == 0:
            columns.append(g)
            continue
        for U in basis_tuples(chart.dim, comp):
            mono = DifferentialForm(chart, comp, {U: ex.ONE})
            col = wedge(g, mono)
            if not col.is_zero():
                columns.append(col)

    def violation(pt: Point) -> float:
        v = coefficients_at(target, pt, spec.guard)
        scale = 1.0 + float(np.max(np.abs(v))) if v.size else 1.0
        if not columns:
            return float(np.max(np.abs(v))) / scale if v.size else 0.0
        M = np.stack(
            [coefficients_at(c, pt, spec.guard) for c in columns], axis=1
        )
        sol, *_ = np.linalg.lstsq(M, v, rcond=RANK_CUTOFF)
        resid = M @ sol - v
        return float(np.max(np.abs(resid))) / scale

    return ex.sampled_check(spec, violation)
