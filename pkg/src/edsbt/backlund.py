"""Wavelike Backlund transformations on a six-coordinate chart.

The chart (x, y, u, v, p, q) carries two overlapping contact structures
theta = du - F dx - q dy and theta_bar = dv - p dx - G dy, coupled through
first-order data F(x,y,u,v,p) and G(x,y,u,v,q).  build_wavelike solves for
the induced pair (f, g), assembles the adapted coframe, and records the
diagnostics; the check_* classifiers decide integrable extension, normality,
wavelike shape, quasilinearity, symmetry, and autonomy by sampled linear
algebra over the chart box.

Coframe slot conventions (order theta, theta_bar, w1, w2, w3, w4): the
derivative of each coframe member is expanded in the 15 wedge slots; torsion
lives in the connection-free slots and the structural zeros listed below must
vanish for a valid adapted section.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np

from . import expr as ex
from . import forms as fm
from .expr import CheckResult, Expr, Point, SampleSpec
from .forms import Chart, DifferentialForm, VectorField

B_COORDS = ("x", "y", "u", "v", "p", "q")
DEFAULT_INTERVAL = (-1.5, 1.5)

SECTION_LABELS = ("theta", "theta_bar", "w1", "w2", "w3", "w4")

# structural zeros per coframe derivative, as index pairs into the label order
ZERO_SLOTS = {
    "theta": ((1, 2), (1, 3), (1, 4), (1, 5), (2, 4), (2, 5), (3, 4), (3, 5)),
    "theta_bar": ((0, 2), (0, 3), (0, 4), (0, 5), (2, 4), (2, 5), (3, 4), (3, 5)),
    "w1": ((0, 4), (0, 5), (1, 4), (1, 5)),
    "w2": ((0, 4), (0, 5), (1, 4), (1, 5)),
    "w3": ((0, 2), (0, 3), (1, 2), (1, 3)),
    "w4": ((0, 2), (0, 3), (1, 2), (1, 3)),
}

# d(theta) must read exactly 1 on w3^w4, d(theta_bar) exactly 1 on w1^w2
NORMALIZATION_SLOTS = {"theta": (4, 5), "theta_bar": (2, 3)}

TORSION_NAMES = ("A1", "A2", "B1", "B2", "B3", "B4", "C1", "C2", "C3", "C4")

# invariant -> (which derivative, which slot); all connection-free
TORSION_SLOTS = {
    "A1": ("theta", (2, 3)),
    "A2": ("theta_bar", (4, 5)),
    "B1": ("w1", (0, 1)),
    "B2": ("w2", (0, 1)),
    "B3": ("w3", (0, 1)),
    "B4": ("w4", (0, 1)),
    "C1": ("w1", (4, 5)),
    "C2": ("w2", (4, 5)),
    "C3": ("w3", (2, 3)),
    "C4": ("w4", (2, 3)),
}


class WavelikeBuildError(ValueError):
    """F/G violate a build precondition (shape or nonvanishing)."""


class SectionValidationError(RuntimeError):
    """A coframe section failed validation; carries the slot report."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


class NormalizationError(SectionValidationError):
    """A normalization slot is off 1: not an adapted section, rescale."""


class StructuralZeroError(SectionValidationError):
    """A structural-zero slot is populated: not a valid section."""


class SubbundleError(ValueError):
    """A candidate 1-form is not inside the stated coframe subbundle."""


class AntiderivativeError(ValueError):
    """No symbolic u-antiderivative in the vocabulary; supply phi_u manually."""


def b_chart(box=None, params=None, guard: float = 1e-6) -> Chart:
    """The six-coordinate chart (x, y, u, v, p, q) with a default box."""
    intervals = dict(box or {})
    for c in B_COORDS:
        intervals.setdefault(c, DEFAULT_INTERVAL)
    return Chart(B_COORDS, intervals, params or {}, guard)


@dataclass(frozen=True)
class CoframeSection:
    """Six labeled, pointwise independent 1-forms spanning the cotangent
    space: the two contact directions and the 2+2 wedge blocks."""

    chart: Chart
    theta: DifferentialForm
    theta_bar: DifferentialForm
    w1: DifferentialForm
    w2: DifferentialForm
    w3: DifferentialForm
    w4: DifferentialForm

    def __post_init__(self):
        for label in SECTION_LABELS:
            form = getattr(self, label)
            if form.chart != self.chart:
                raise fm.ChartMismatchError(f"{label} lives on a different chart")
            if form.degree != 1:
                raise ValueError(f"{label} must be a 1-form")

    def forms(self) -> Tuple[DifferentialForm, ...]:
        return tuple(getattr(self, label) for label in SECTION_LABELS)

    def derivatives(self) -> Tuple[DifferentialForm, ...]:
        return tuple(fm.exterior_derivative(f) for f in self.forms())


@dataclass(frozen=True)
class SectionReport:
    """Worst sampled slot magnitudes of a section's structure equations."""

    zero_slot_max: Mapping[Tuple[str, Tuple[int, int]], float]
    normalization_max: Mapping[str, float]
    structural_violation: float
    normalization_violation: float
    samples: int
    witness: Optional[Point]
    tolerance: float = 1e-9

    @property
    def ok(self) -> bool:
        return max(self.structural_violation, self.normalization_violation) <= self.tolerance


def _slot_table_at(section: CoframeSection, derivatives, pt: Point, guard):
    """All six derivative expansions at one point: label -> 15-vector."""
    S = fm.coframe_matrix_at(section.forms(), pt, guard)
    if np.linalg.cond(S) > fm.COND_LIMIT:
        raise fm.SingularCoframeError(f"coframe singular at {pt.flat()}")
    A = fm.wedge_basis_matrix(S, 2)
    V = np.stack(
        [fm.coefficients_at(df, pt, guard) for df in derivatives], axis=1
    )
    X = np.linalg.solve(A, V)
    return {label: X[:, j] for j, label in enumerate(SECTION_LABELS)}


def validate_section(section: CoframeSection,
                     spec: Optional[SampleSpec] = None) -> SectionReport:
    """Expand the derivative of each coframe member in the coframe wedge
    basis at samples and check the connection-free structure:

    structural zeros per ZERO_SLOTS, and the two normalization slots
    (d theta on w3^w4, d theta_bar on w1^w2) equal to 1.

    Raises NormalizationError / StructuralZeroError on failure, with the
    report attached to the exception.
    """
    spec = fm.resolve_spec(section.chart, spec)
    derivatives = section.derivatives()
    index = fm.coefficient_index(section.chart, 2)

    zero_max = {(lbl, slot): 0.0 for lbl in SECTION_LABELS for slot in ZERO_SLOTS[lbl]}
    norm_max = {lbl: 0.0 for lbl in NORMALIZATION_SLOTS}
    worst_zero = 0.0
    worst_norm = 0.0
    witness = None

    def visit(pt: Point) -> float:
        nonlocal worst_zero, worst_norm, witness
        table = _slot_table_at(section, derivatives, pt, spec.guard)
        local = 0.0
        for lbl in SECTION_LABELS:
            row = table[lbl]
            scale = 1.0 + float(np.max(np.abs(row)))
            for slot in ZERO_SLOTS[lbl]:
                v = abs(float(row[index[slot]])) / scale
                if v > zero_max[lbl, slot]:
                    zero_max[lbl, slot] = v
                worst_zero = max(worst_zero, v)
                local = max(local, v)
        for lbl, slot in NORMALIZATION_SLOTS.items():
            v = abs(float(table[lbl][index[slot]]) - 1.0)
            if v > norm_max[lbl]:
                norm_max[lbl] = v
            worst_norm = max(worst_norm, v)
            local = max(local, v)
        return local

    collected = ex.sampled_collect(spec, visit)
    worst = max((v for _, v in collected), default=0.0)
    for pt, v in collected:
        if v == worst:
            witness = pt
            break
    report = SectionReport(
        zero_slot_max=zero_max,
        normalization_max=norm_max,
        structural_violation=worst_zero,
        normalization_violation=worst_norm,
        samples=spec.count,
        witness=witness,
        tolerance=spec.tolerance,
    )
    if worst_norm > spec.tolerance:
        raise NormalizationError(
            "normalization slot off 1: not an adapted section, rescale "
            f"theta/theta_bar (max deviation {worst_norm:.3e})",
            report,
        )
    if worst_zero > spec.tolerance:
        raise StructuralZeroError(
            f"structural-zero slot populated (max {worst_zero:.3e})", report
        )
    return report


@dataclass(frozen=True)
class TorsionInvariants:
    """The ten torsion functions sampled pointwise.

    `values` maps each name in TORSION_NAMES to an array over `points`;
    `exprs` carries exact expressions when the construction provides them
    (built transformations know A1 = F_p and A2 = G_q).
    """

    values: Mapping[str, np.ndarray]
    points: Tuple[Point, ...]
    exprs: Optional[Mapping[str, Expr]] = None

    def at(self, i: int) -> dict:
        return {name: float(self.values[name][i]) for name in TORSION_NAMES}

    def product(self) -> np.ndarray:
        return self.values["A1"] * self.values["A2"]


def extract_torsion(section: CoframeSection,
                    points: Optional[Sequence[Point]] = None,
                    spec: Optional[SampleSpec] = None,
                    exprs: Optional[Mapping[str, Expr]] = None) -> TorsionInvariants:
    """Read the ten torsion functions from the connection-free slots.

    With `points` given they are used verbatim; otherwise samples are drawn
    from `spec` (or the chart default) and the section is validated first.
    """
    derivatives = section.derivatives()
    index = fm.coefficient_index(section.chart, 2)
    if points is None:
        spec = fm.resolve_spec(section.chart, spec)
        validate_section(section, spec)
        guard = spec.guard
        pts = [pt for pt, _ in ex.sampled_collect(spec, lambda p: None)]
    else:
        guard = section.chart.guard
        pts = list(points)

    values = {name: np.empty(len(pts)) for name in TORSION_NAMES}
    for i, pt in enumerate(pts):
        table = _slot_table_at(section, derivatives, pt, guard)
        for name, (lbl, slot) in TORSION_SLOTS.items():
            values[name][i] = table[lbl][index[slot]]
    return TorsionInvariants(values, tuple(pts), exprs)


def check_normal(torsion: TorsionInvariants, guard: float = 1e-6) -> bool:
    """Normality: |A1|, |A2|, |A1 A2 - 1| bounded away from zero on samples."""
    margins = normal_margins(torsion)
    return all(m > guard for m in margins.values())


def normal_margins(torsion: TorsionInvariants) -> dict:
    a1, a2 = torsion.values["A1"], torsion.values["A2"]
    return {
        "A1": float(np.min(np.abs(a1))),
        "A2": float(np.min(np.abs(a2))),
        "A1A2_minus_1": float(np.min(np.abs(a1 * a2 - 1.0))),
    }


# ---------------------------------------------------------------------------
# construction from first-order data


@dataclass(frozen=True)
class BuildReport:
    """Diagnostics from build_wavelike.

    c2/c4 are the stored correction coefficients with the sign that satisfied
    the adapted-derivative conditions; df/dg are the residual checks that the
    derived pair (f, g) depends on (v, p) only through F and on (u, q) only
    through G -- the defining property of a genuine transformation.
    """

    c2: Expr
    c2_sign: int
    c4: Expr
    c4_sign: int
    adapted_residual: float
    df_residual: CheckResult
    dg_residual: CheckResult
    fp_margin: float
    gq_margin: float
    delta_margin: float

    @property
    def conditions_hold(self) -> bool:
        """True when both residual checks pass: the pair (f, g) really does
        factor through (F, G), so the transformation closes."""
        return self.df_residual.ok and self.dg_residual.ok


@dataclass(frozen=True)
class WavelikeBT:
    chart: Chart
    F: Expr
    G: Expr
    f: Expr
    g: Expr
    fp: Expr
    gq: Expr
    section: CoframeSection
    report: BuildReport

    def generators(self) -> list:
        """theta, theta_bar and the two decomposable wedge blocks."""
        s = self.section
        return [s.theta, s.theta_bar, fm.wedge(s.w1, s.w2), fm.wedge(s.w3, s.w4)]

    def torsion_exprs(self) -> dict:
        return {"A1": self.fp, "A2": self.gq}


def _sampled_min(expr: Expr, spec: SampleSpec) -> float:
    def magnitude(pt: Point) -> float:
        return abs(float(ex.evaluate(expr, pt.env(), spec.guard)))

    return min(v for _, v in ex.sampled_collect(spec, magnitude))


def build_wavelike(F, G, chart: Optional[Chart] = None,
                   spec: Optional[SampleSpec] = None) -> WavelikeBT:
    """Assemble the transformation determined by u_x = F, ubar_x relations.

    Solves the linear pair  f - g F_p = F_y + q F_u + G F_v,
                            g - f G_q = G_x + F G_u + p G_v
    for (f, g), builds the adapted coframe, fixes the theta-corrections in
    w2/w4 pointwise, and reports the residual diagnostics.
    """
    chart = chart or b_chart()
    if isinstance(F, str):
        F = chart.parse(F)
    if isinstance(G, str):
        G = chart.parse(G)
    if ex.differentiate(F, "q") != ex.ZERO:
        raise WavelikeBuildError("F must not depend on q")
    if ex.differentiate(G, "p") != ex.ZERO:
        raise WavelikeBuildError("G must not depend on p")
    spec = fm.resolve_spec(chart, spec)

    Fp = ex.differentiate(F, "p")
    Gq = ex.differentiate(G, "q")
    delta = ex.sub(ex.ONE, ex.mul(Fp, Gq))
    fp_margin = _sampled_min(Fp, spec)
    gq_margin = _sampled_min(Gq, spec)
    delta_margin = _sampled_min(delta, spec)
    for name, margin in (("F_p", fp_margin), ("G_q", gq_margin), ("1 - F_p G_q", delta_margin)):
        if margin <= spec.guard:
            raise WavelikeBuildError(f"{name} vanishes on the box (min {margin:.3e})")

    q_var, p_var = ex.Var("q"), ex.Var("p")
    R1 = ex.add(
        ex.differentiate(F, "y"),
        ex.add(ex.mul(q_var, ex.differentiate(F, "u")), ex.mul(G, ex.differentiate(F, "v"))),
    )
    R2 = ex.add(
        ex.differentiate(G, "x"),
        ex.add(ex.mul(F, ex.differentiate(G, "u")), ex.mul(p_var, ex.differentiate(G, "v"))),
    )
    f = ex.div(ex.add(R1, ex.mul(Fp, R2)), delta)
    g = ex.div(ex.add(R2, ex.mul(Gq, R1)), delta)

    dx, dy, du, dv, dp, dq = (fm.d_coord(chart, c) for c in B_COORDS)
    theta = du - F * dx - q_var * dy
    theta_bar = dv - p_var * dx - G * dy
    eta2 = dp - g * dy
    eta4 = dq - f * dx

    c2, c2_sign, res2 = _fit_correction(
        spec, fm.exterior_derivative(theta), theta,
        [fm.wedge(dx, eta2), fm.wedge(dx, theta_bar), fm.wedge(dy, eta4)],
        target_col=1, lead_col=0,
        candidate=ex.div(ex.differentiate(F, "v"), Fp),
    )
    c4, c4_sign, res4 = _fit_correction(
        spec, fm.exterior_derivative(theta_bar), theta_bar,
        [fm.wedge(dx, eta2), fm.wedge(dy, eta4), fm.wedge(dy, theta)],
        target_col=2, lead_col=1,
        candidate=ex.div(ex.differentiate(G, "u"), Gq),
    )

    w2 = eta2 + c2 * theta_bar
    w4 = eta4 + c4 * theta
    section = CoframeSection(chart, theta, theta_bar, dx, w2, dy, w4)

    df_res = ex.equiv_random(
        ex.sub(ex.mul(ex.differentiate(f, "v"), Fp), ex.mul(ex.differentiate(f, "p"), ex.differentiate(F, "v"))),
        ex.ZERO, spec,
    )
    dg_res = ex.equiv_random(
        ex.sub(ex.mul(ex.differentiate(g, "u"), Gq), ex.mul(ex.differentiate(g, "q"), ex.differentiate(G, "u"))),
        ex.ZERO, spec,
    )

    report = BuildReport(
        c2=c2, c2_sign=c2_sign, c4=c4, c4_sign=c4_sign,
        adapted_residual=max(res2, res4),
        df_residual=df_res, dg_residual=dg_res,
        fp_margin=fp_margin, gq_margin=gq_margin, delta_margin=delta_margin,
    )
    return WavelikeBT(chart, F, G, f, g, Fp, Gq, section, report)


def _fit_correction(spec, d_contact, contact, block_forms, target_col, lead_col,
                    candidate: Expr):
    """Solve the derivative-condition projection pointwise and match the
    correction coefficient against +-candidate.

    The derivative of the contact form, wedged with the form itself, must lie
    in the span of {block ^ contact}; the coefficient on column `target_col`
    divided by the one on `lead_col` gives the correction value at each point.
    Returns (signed expression, sign, worst least-squares residual).
    """
    columns = [fm.wedge(b, contact) for b in block_forms]
    rhs_form = fm.wedge(d_contact, contact)

    probes = min(spec.count, 8)
    worst_resid = 0.0
    ratios = []
    cand_vals = []
    probe_spec = spec.replace(count=probes)

    def fit(pt: Point):
        nonlocal worst_resid
        M = np.stack([fm.coefficients_at(c, pt, spec.guard) for c in columns], axis=1)
        v = fm.coefficients_at(rhs_form, pt, spec.guard)
        sol, *_ = np.linalg.lstsq(M, v, rcond=fm.RANK_CUTOFF)
        resid = float(np.max(np.abs(M @ sol - v))) / (1.0 + float(np.max(np.abs(v))))
        worst_resid = max(worst_resid, resid)
        lead = sol[lead_col]
        if abs(lead) < spec.guard:
            raise ex.DomainError("leading block coefficient vanished")
        ratios.append(sol[target_col] / lead)
        cand_vals.append(float(ex.evaluate(candidate, pt.env(), spec.guard)))

    ex.sampled_collect(probe_spec, fit)
    if worst_resid > max(spec.tolerance, 1e-8):
        raise WavelikeBuildError(
            f"adapted-derivative conditions unsatisfied (residual {worst_resid:.3e})"
        )
    ratios_arr = np.array(ratios)
    cand_arr = np.array(cand_vals)
    scale = 1.0 + np.max(np.abs(ratios_arr))
    plus = float(np.max(np.abs(ratios_arr - cand_arr))) / scale
    minus = float(np.max(np.abs(ratios_arr + cand_arr))) / scale
    threshold = max(spec.tolerance, 1e-8)
    if plus <= threshold:
        return candidate, 1, worst_resid
    if minus <= threshold:
        return ex.neg(candidate), -1, worst_resid
    raise WavelikeBuildError(
        "neither sign of the closed-form correction matches the adapted-"
        f"derivative conditions (deviations {plus:.3e} / {minus:.3e})"
    )


# ---------------------------------------------------------------------------
# classifiers


@dataclass(frozen=True)
class RawExtensionSystem:
    """Explicit generator data for the integrable-extension test when no
    built coframe is available: the two contact forms plus the decomposable
    pairs pulled back from each side."""

    chart: Chart
    theta: DifferentialForm
    theta_bar: DifferentialForm
    omega1: DifferentialForm
    omega2: DifferentialForm
    omega1_bar: DifferentialForm
    omega2_bar: DifferentialForm


def integrable_extension_checks(obj, spec: Optional[SampleSpec] = None) -> dict:
    """The two sampled membership checks behind check_integrable_extension."""
    if isinstance(obj, WavelikeBT):
        s = obj.section
        o1 = fm.wedge(s.w1, s.w2)
        o2 = fm.wedge(s.w3, s.w4)
        theta, theta_bar = s.theta, s.theta_bar
        o1b, o2b = o1, o2
        chart = obj.chart
    else:
        theta, theta_bar = obj.theta, obj.theta_bar
        o1, o2 = obj.omega1, obj.omega2
        o1b, o2b = obj.omega1_bar, obj.omega2_bar
        chart = obj.chart
    spec = fm.resolve_spec(chart, spec)
    return {
        "dtheta": fm.ideal_contains(
            fm.exterior_derivative(theta), [theta, theta_bar, o1b, o2b], spec
        ),
        "dtheta_bar": fm.ideal_contains(
            fm.exterior_derivative(theta_bar), [theta_bar, theta, o1, o2], spec
        ),
    }


def check_integrable_extension(obj, spec: Optional[SampleSpec] = None) -> bool:
    """True iff d(theta) lies in the ideal spanned by both contact forms and
    the barred decomposable pair, and symmetrically for d(theta_bar)."""
    return all(r.ok for r in integrable_extension_checks(obj, spec).values())


def check_wavelike(section: CoframeSection, eta1: DifferentialForm,
                   eta3: DifferentialForm,
                   spec: Optional[SampleSpec] = None) -> bool:
    """Rank-one integrability of candidate line bundles inside the blocks.

    eta1 must lie in span{w1, w2} and eta3 in span{w3, w4} at samples
    (SubbundleError otherwise); returns True iff d(eta)^eta vanishes on
    samples for both.
    """
    spec = fm.resolve_spec(section.chart, spec)

    def membership(candidate, span_forms, label):
        def violation(pt: Point) -> float:
            M = np.stack(
                [fm.coefficients_at(w, pt, spec.guard) for w in span_forms], axis=1
            )
            v = fm.coefficients_at(candidate, pt, spec.guard)
            sol, *_ = np.linalg.lstsq(M, v, rcond=fm.RANK_CUTOFF)
            return float(np.max(np.abs(M @ sol - v))) / (1.0 + float(np.max(np.abs(v))))

        res = ex.sampled_check(spec, violation)
        if not res.ok:
            raise SubbundleError(
                f"{label} is not inside its stated block (violation {res.max_violation:.3e})"
            )

    membership(eta1, (section.w1, section.w2), "eta1")
    membership(eta3, (section.w3, section.w4), "eta3")

    def frobenius(candidate):
        three = fm.wedge(fm.exterior_derivative(candidate), candidate)

        def violation(pt: Point) -> float:
            v = fm.coefficients_at(three, pt, spec.guard)
            scale = 1.0 + float(np.max(np.abs(fm.coefficients_at(candidate, pt, spec.guard))))
            return float(np.max(np.abs(v))) / scale

        return ex.sampled_check(spec, violation)

    return frobenius(eta1).ok and frobenius(eta3).ok


def check_quasilinear(bt: WavelikeBT, spec: Optional[SampleSpec] = None) -> bool:
    """The product F_p G_q must not depend on p or q (its differential lies
    in the span of dx, dy, du, dv)."""
    spec = fm.resolve_spec(bt.chart, spec)
    product = ex.mul(bt.fp, bt.gq)
    for coord in ("p", "q"):
        partial = ex.differentiate(product, coord)
        if partial == ex.ZERO:
            continue
        if not ex.equiv_random(partial, ex.ZERO, spec).ok:
            return False
    return True


def check_symmetry(generators: Sequence[DifferentialForm], X: VectorField,
                   spec: Optional[SampleSpec] = None) -> bool:
    """True iff the Lie derivative of every generator stays in the ideal."""
    generators = list(generators)
    spec = fm.resolve_spec(generators[0].chart, spec)
    for g in generators:
        moved = fm.lie_derivative(X, g)
        if moved.is_zero():
            continue
        if not fm.ideal_contains(moved, generators, spec).ok:
            return False
    return True


def check_autonomous(bt: WavelikeBT, X: VectorField, Y: VectorField,
                     spec: Optional[SampleSpec] = None) -> bool:
    """Commuting symmetry pair transverse to the two line bundles:
    [X, Y] = 0, both fields are symmetries of the ideal, and the 2x2 pairing
    determinant of (w1, w3) against (X, Y) stays away from zero."""
    spec = fm.resolve_spec(bt.chart, spec)
    chart = bt.chart
    for i in range(chart.dim):
        bracket = ex.ZERO
        for j, coord in enumerate(chart.coords):
            bracket = ex.add(
                bracket,
                ex.sub(
                    ex.mul(X.components[j], ex.differentiate(Y.components[i], coord)),
                    ex.mul(Y.components[j], ex.differentiate(X.components[i], coord)),
                ),
            )
        if bracket != ex.ZERO and not ex.equiv_random(bracket, ex.ZERO, spec).ok:
            return False

    gens = bt.generators()
    if not (check_symmetry(gens, X, spec) and check_symmetry(gens, Y, spec)):
        return False
    return transversality_det(bt, X, Y, spec) > spec.guard


def transversality_det(bt: WavelikeBT, X: VectorField, Y: VectorField,
                       spec: Optional[SampleSpec] = None) -> float:
    """Sampled minimum of |det| for the 2x2 pairing of (w1, w3) against
    (X, Y); positive values certify transversality."""
    spec = fm.resolve_spec(bt.chart, spec)

    def pairing(form: DifferentialForm, field: VectorField) -> Expr:
        total = ex.ZERO
        for (i,), c in form.coeffs.items():
            total = ex.add(total, ex.mul(c, field.components[i]))
        return total

    s = bt.section
    det = ex.sub(
        ex.mul(pairing(s.w1, X), pairing(s.w3, Y)),
        ex.mul(pairing(s.w1, Y), pairing(s.w3, X)),
    )
    return _sampled_min(det, spec)


# ---------------------------------------------------------------------------
# quasilinear expansion and first-order normalization


@dataclass(frozen=True)
class QuasilinearFG:
    """Closed-form (f, g) for affine first-order data F = F0 + F1 p,
    G = G0 + G1 q, with the bilinear-term report."""

    f: Expr
    g: Expr
    coefficients: Mapping[Tuple[str, str], Expr]  # ("f"|"g", "p"|"q"|"pq")
    pq_vanishes: bool
    pq_checks: Mapping[str, CheckResult]


def quasilinear_fg(F0, F1, G0, G1, chart: Optional[Chart] = None,
                   spec: Optional[SampleSpec] = None) -> QuasilinearFG:
    """Expand (f, g) for affine data exactly as the 2x2 inverse times the
    2x4 derivative matrix times (1, p, q, pq)."""
    chart = chart or b_chart()
    F0, F1, G0, G1 = (
        chart.parse(e) if isinstance(e, str) else (e if isinstance(e, Expr) else ex._coerce(e))
        for e in (F0, F1, G0, G1)
    )
    for name, e in (("F0", F0), ("F1", F1), ("G0", G0), ("G1", G1)):
        bad = e.names() & {"p", "q"}
        if bad:
            raise WavelikeBuildError(f"{name} must not involve {sorted(bad)}")
    spec = fm.resolve_spec(chart, spec)
    delta = ex.sub(ex.ONE, ex.mul(F1, G1))
    for name, e in (("F1", F1), ("G1", G1), ("1 - F1 G1", delta)):
        margin = _sampled_min(e, spec)
        if margin <= spec.guard:
            raise WavelikeBuildError(f"{name} vanishes on the box (min {margin:.3e})")

    def d(e, c):
        return ex.differentiate(e, c)

    row_f = (
        ex.add(d(F0, "y"), ex.mul(G0, d(F0, "v"))),
        ex.add(d(F1, "y"), ex.mul(G0, d(F1, "v"))),
        ex.add(d(F0, "u"), ex.mul(G1, d(F0, "v"))),
        ex.add(d(F1, "u"), ex.mul(G1, d(F1, "v"))),
    )
    row_g = (
        ex.add(d(G0, "x"), ex.mul(F0, d(G0, "u"))),
        ex.add(d(G0, "v"), ex.mul(F1, d(G0, "u"))),
        ex.add(d(G1, "x"), ex.mul(F0, d(G1, "u"))),
        ex.add(d(G1, "v"), ex.mul(F1, d(G1, "u"))),
    )
    f_terms = tuple(ex.div(ex.add(a, ex.mul(F1, b)), delta) for a, b in zip(row_f, row_g))
    g_terms = tuple(ex.div(ex.add(ex.mul(G1, a), b), delta) for a, b in zip(row_f, row_g))

    p_var, q_var = ex.Var("p"), ex.Var("q")
    monomials = (ex.ONE, p_var, q_var, ex.mul(p_var, q_var))

    def assemble(terms):
        total = ex.ZERO
        for coeff, mono in zip(terms, monomials):
            total = ex.add(total, ex.mul(coeff, mono))
        return total

    f = assemble(f_terms)
    g = assemble(g_terms)
    coefficients = {
        ("f", "p"): f_terms[1], ("f", "q"): f_terms[2], ("f", "pq"): f_terms[3],
        ("g", "p"): g_terms[1], ("g", "q"): g_terms[2], ("g", "pq"): g_terms[3],
    }
    pq_checks = {
        "f": ex.equiv_random(f_terms[3], ex.ZERO, spec),
        "g": ex.equiv_random(g_terms[3], ex.ZERO, spec),
    }
    return QuasilinearFG(
        f=f, g=g, coefficients=coefficients,
        pq_vanishes=all(r.ok for r in pq_checks.values()),
        pq_checks=pq_checks,
    )


@dataclass(frozen=True)
class QuasilinearPDE:
    """u_xy = A u_x u_y + B u_x + C u_y + D with coefficients in (x, y, u)."""

    A: Expr
    B: Expr = ex.ZERO
    C: Expr = ex.ZERO
    D: Expr = ex.ZERO


def u_antiderivative(e: Expr) -> Expr:
    """Symbolic antiderivative in u for the supported shapes: u-free factors,
    sums, negation, u-powers, and quotients with u-free denominators."""
    u = ex.Var("u")
    if "u" not in e.names():
        return ex.mul(e, u)
    if e == u:
        return ex.mul(ex.Const(Fraction(1, 2)), ex.pow_int(u, 2))
    if isinstance(e, ex.Neg):
        return ex.neg(u_antiderivative(e.child))
    if isinstance(e, ex.Add):
        return ex.add(u_antiderivative(e.left), u_antiderivative(e.right))
    if isinstance(e, ex.Sub):
        return ex.sub(u_antiderivative(e.left), u_antiderivative(e.right))
    if isinstance(e, ex.Pow) and e.base == u and e.exponent >= 0:
        n = e.exponent
        return ex.mul(ex.Const(Fraction(1, n + 1)), ex.pow_int(u, n + 1))
    if isinstance(e, ex.Mul):
        if "u" not in e.left.names():
            return ex.mul(e.left, u_antiderivative(e.right))
        if "u" not in e.right.names():
            return ex.mul(u_antiderivative(e.left), e.right)
    if isinstance(e, ex.Div) and "u" not in e.right.names():
        return ex.div(u_antiderivative(e.left), e.right)
    raise AntiderivativeError(
        "no symbolic antiderivative in the vocabulary; supply phi_u manually"
    )


@dataclass(frozen=True)
class FirstOrderNormalization:
    phi_u: Expr
    residual: CheckResult  # phi_uu + A phi_u == 0
    a_tilde: Expr
    description: Mapping[str, str]


def normalize_first_order(pde: QuasilinearPDE, chart: Optional[Chart] = None,
                          spec: Optional[SampleSpec] = None) -> FirstOrderNormalization:
    """Point transform killing the bilinear term: phi_u = exp(-antider(A)).

    The returned phi_u satisfies phi_uu + A phi_u = 0, which makes the
    transformed bilinear coefficient (phi_uu + A phi_u)/phi_u^2 vanish.
    """
    chart = chart or Chart(
        ("x", "y", "u"), {c: DEFAULT_INTERVAL for c in ("x", "y", "u")}
    )
    spec = fm.resolve_spec(chart, spec)
    primitive = u_antiderivative(pde.A)
    phi_u = ex.exp(ex.neg(primitive))
    residual = ex.equiv_random(
        ex.add(ex.differentiate(phi_u, "u"), ex.mul(pde.A, phi_u)), ex.ZERO, spec
    )
    a_tilde = ex.div(
        ex.add(ex.differentiate(phi_u, "u"), ex.mul(pde.A, phi_u)),
        ex.pow_int(phi_u, 2),
    )
    description = {
        "A_tilde": "0: phi_u solves phi_uu + A phi_u = 0",
        "B_tilde": "first-order coefficients transform within (x, y, u); shape preserved",
        "C_tilde": "first-order coefficients transform within (x, y, u); shape preserved",
        "D_tilde": "zeroth-order coefficient transforms within (x, y, u); shape preserved",
        "note": (
            "phi_u is exp of the negative u-antiderivative of A; the "
            "alternative reading 'antiderivative of exp(-A)' does not solve "
            "phi_uu + A phi_u = 0 and is rejected"
        ),
    }
    return FirstOrderNormalization(phi_u, residual, a_tilde, description)
