"""Command-line interface.

Reads a line-oriented system-definition file, runs the requested checks
or propagations against it, and emits a flat JSON report plus optional
CSV grids.  Reports are byte-reproducible for identical inputs and seed:
they contain no timestamps, keys are sorted, and every sampled quantity
is driven by the resolved seed (--seed flag, else EDSBT_SEED, else 0).

Definition file format: `[block]` headers, `key = value` entries, `#`
starts a comment, lists are comma-separated.  The blocks are [chart]
(coords plus one interval entry per coordinate), [params] (fixed value
or [lo, hi] range), exactly one of [bt] / [ma] / [section] /
[tzitzeica], and optional [candidates] and [spec] blocks.

Exit status: 0 when every emitted record passes, 1 when any record
fails or a computation breaks down, 2 on usage or definition errors.
`classify` emits verdicts rather than pass/fail checks, so it exits 0
whenever the classification itself succeeds.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import __version__
from . import backlund as bk
from . import expr as ex
from . import forms as fm
from . import monge_ampere as ma
from . import propagate as pp


class DefinitionError(ValueError):
    """Malformed definition file or flags (reported as usage, exit 2)."""


PRIMARY_BLOCKS = ("bt", "ma", "section", "tzitzeica")
KNOWN_BLOCKS = ("chart", "params") + PRIMARY_BLOCKS + ("candidates", "spec")
SECTION_KEYS = ("theta", "theta_bar", "w1", "w2", "w3", "w4")


@dataclass(frozen=True)
class SystemDefinition:
    chart: fm.Chart
    kind: str
    body: dict
    candidates: dict
    spec_overrides: dict


# ---------------------------------------------------------------------------
# definition file parsing


def _raw_blocks(text: str, path: str) -> dict:
    blocks: dict = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in KNOWN_BLOCKS:
                raise DefinitionError(f"{path}:{lineno}: unknown block [{name}]")
            if name in blocks:
                raise DefinitionError(f"{path}:{lineno}: duplicate block [{name}]")
            current = blocks[name] = {}
            continue
        if current is None:
            raise DefinitionError(f"{path}:{lineno}: entry before any block header")
        if "=" not in line:
            raise DefinitionError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key or key in current:
            raise DefinitionError(f"{path}:{lineno}: bad or repeated key {key!r}")
        current[key] = value.strip()
    return blocks


def _split_list(value: str) -> list:
    return [part.strip() for part in value.split(",")]


def _parse_float(value: str, where: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise DefinitionError(f"{where}: expected a number, got {value!r}") from None


def _parse_chart(blocks: dict, path: str) -> fm.Chart:
    chart_block = blocks.get("chart")
    if not chart_block:
        raise DefinitionError(f"{path}: missing [chart] block")
    if "coords" not in chart_block:
        raise DefinitionError(f"{path}: [chart] needs a coords entry")
    coords = tuple(_split_list(chart_block["coords"]))
    box = {}
    for name in coords:
        if name not in chart_block:
            raise DefinitionError(f"{path}: [chart] missing interval for {name}")
        parts = _split_list(chart_block[name])
        if len(parts) != 2:
            raise DefinitionError(f"{path}: interval for {name} needs lo, hi")
        box[name] = (
            _parse_float(parts[0], f"[chart] {name}"),
            _parse_float(parts[1], f"[chart] {name}"),
        )
    params = {}
    for name, value in blocks.get("params", {}).items():
        if value.startswith("[") and value.endswith("]"):
            parts = _split_list(value[1:-1])
            if len(parts) != 2:
                raise DefinitionError(f"{path}: [params] {name} range needs lo, hi")
            params[name] = (
                _parse_float(parts[0], f"[params] {name}"),
                _parse_float(parts[1], f"[params] {name}"),
            )
        else:
            params[name] = _parse_float(value, f"[params] {name}")
    guard = 1e-6
    if "guard" in blocks.get("spec", {}):
        guard = _parse_float(blocks["spec"]["guard"], "[spec] guard")
    try:
        return fm.Chart(coords, box, params, guard=guard)
    except ValueError as err:
        raise DefinitionError(f"{path}: {err}") from None


def parse_definition(path: str) -> SystemDefinition:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as err:
        raise DefinitionError(f"cannot read {path}: {err}") from None
    blocks = _raw_blocks(text, path)
    primary = [name for name in PRIMARY_BLOCKS if name in blocks]
    if len(primary) != 1:
        raise DefinitionError(
            f"{path}: exactly one of {PRIMARY_BLOCKS} required, "
            f"found {primary or 'none'}"
        )
    kind = primary[0]
    chart = _parse_chart(blocks, path)
    expected = {
        "bt": bk.B_COORDS,
        "section": bk.B_COORDS,
        "ma": ma.MA_COORDS,
        "tzitzeica": ("x", "y"),
    }[kind]
    if chart.coords != tuple(expected):
        raise DefinitionError(
            f"{path}: a [{kind}] definition needs coords = {', '.join(expected)}"
        )

    body = dict(blocks[kind])
    required = {
        "bt": ("F", "G"),
        "ma": ("A", "B", "C", "D", "E"),
        "section": SECTION_KEYS,
        "tzitzeica": ("h", "lambda", "alpha0", "beta0"),
    }[kind]
    missing = [key for key in required if key not in body]
    if missing:
        raise DefinitionError(f"{path}: [{kind}] missing entries {missing}")
    extra = [key for key in body if key not in required]
    if extra:
        raise DefinitionError(f"{path}: [{kind}] unknown entries {extra}")
    candidates = dict(blocks.get("candidates", {}))
    _validate_expressions(chart, kind, body, candidates, path)

    spec_overrides = {}
    spec_block = blocks.get("spec", {})
    for key, cast in (("samples", int), ("tol", float), ("guard", float), ("seed", int)):
        if key in spec_block:
            try:
                spec_overrides[key] = cast(spec_block[key])
            except ValueError:
                raise DefinitionError(
                    f"{path}: [spec] {key} is not a {cast.__name__}"
                ) from None
    return SystemDefinition(
        chart=chart,
        kind=kind,
        body=body,
        candidates=candidates,
        spec_overrides=spec_overrides,
    )


def _validate_expressions(chart, kind, body, candidates, path):
    """Parse every expression entry up front: a file that does not parse
    is a usage error no matter which subcommand touches it."""

    def check(text, where):
        try:
            chart.parse(text)
        except ex.ExprSyntaxError as err:
            raise DefinitionError(f"{path}: {where}: {err}") from None

    def check_list(value, where):
        parts = _split_list(value)
        if len(parts) != chart.dim:
            raise DefinitionError(
                f"{path}: {where}: expected {chart.dim} comma-separated expressions"
            )
        for part in parts:
            check(part, where)

    if kind in ("bt", "ma"):
        for key, value in body.items():
            check(value, f"[{kind}] {key}")
    elif kind == "section":
        for key in SECTION_KEYS:
            check_list(body[key], f"[section] {key}")
    else:
        check(body["h"], "[tzitzeica] h")
        for key in ("lambda", "alpha0", "beta0"):
            _parse_float(body[key], f"[tzitzeica] {key}")
    for key, value in candidates.items():
        if key not in ("eta1", "eta3", "X", "Y"):
            raise DefinitionError(f"{path}: [candidates] unknown key {key!r}")
        check_list(value, f"[candidates] {key}")


def _parse_exprs(defn: SystemDefinition, value: str, where: str, n: int) -> list:
    parts = _split_list(value)
    if len(parts) != n:
        raise DefinitionError(f"{where}: expected {n} comma-separated expressions")
    try:
        return [defn.chart.parse(part) for part in parts]
    except ex.ExprSyntaxError as err:
        raise DefinitionError(f"{where}: {err}") from None


def _coefficient_form(defn: SystemDefinition, value: str, where: str):
    coeffs = _parse_exprs(defn, value, where, defn.chart.dim)
    return fm.one_form(defn.chart, dict(zip(defn.chart.coords, coeffs)))


def _vector_field(defn: SystemDefinition, value: str, where: str):
    comps = _parse_exprs(defn, value, where, defn.chart.dim)
    return fm.VectorField(defn.chart, tuple(comps))


def _body_expr(defn: SystemDefinition, key: str):
    try:
        return defn.chart.parse(defn.body[key])
    except ex.ExprSyntaxError as err:
        raise DefinitionError(f"[{defn.kind}] {key}: {err}") from None


# ---------------------------------------------------------------------------
# report assembly


def _digest(path: str) -> str:
    with open(path, "rb") as fh:
        return "sha256:" + hashlib.sha256(fh.read()).hexdigest()


def _record(name: str, status: str, samples: int = 0,
            max_violation: float = 0.0, witness: str = "") -> dict:
    return {
        "name": name,
        "status": status,
        "samples": samples,
        "max_violation": max_violation,
        "witness": witness,
    }


def _record_from_check(name: str, result: ex.CheckResult) -> dict:
    return _record(
        name,
        "pass" if result.ok else "fail",
        samples=result.samples,
        max_violation=float(result.max_violation),
        witness=result.witness.flat() if result.witness else "",
    )


class _Runner:
    """Definition, resolved sampling policy, and report state for one run."""

    def __init__(self, args):
        self.args = args
        self.defn = parse_definition(args.file)
        overrides = dict(self.defn.spec_overrides)
        if args.samples is not None:
            overrides["samples"] = args.samples
        if args.tol is not None:
            overrides["tol"] = args.tol
        # seed precedence: --seed flag, then EDSBT_SEED, then the def file
        if args.seed is not None:
            overrides["seed"] = args.seed
        else:
            env_seed = os.environ.get("EDSBT_SEED")
            if env_seed is not None:
                try:
                    overrides["seed"] = int(env_seed)
                except ValueError:
                    raise DefinitionError(
                        f"EDSBT_SEED is not an integer: {env_seed!r}"
                    ) from None
        self.samples = overrides.get("samples", 64)
        self.tol = overrides.get("tol", 1e-9)
        self.seed = overrides.get("seed", 0)
        self.spec = self.defn.chart.sample_spec(
            count=self.samples, tolerance=self.tol, seed=self.seed
        )
        self.records: list = []
        self.extras: dict = {}
        self.notes: list = []

    def require_kind(self, *kinds):
        if self.defn.kind not in kinds:
            wanted = " or ".join(f"[{k}]" for k in kinds)
            raise DefinitionError(
                f"{self.args.file}: this command needs a {wanted} definition, "
                f"found [{self.defn.kind}]"
            )

    def build_bt(self) -> bk.WavelikeBT:
        bt = bk.build_wavelike(
            self.defn.body["F"], self.defn.body["G"], self.defn.chart, self.spec
        )
        self.notes.append(f"w2 correction c2 fitted as {bt.report.c2_sign:+d} * F_v/F_p")
        self.notes.append(f"w4 correction c4 fitted as {bt.report.c4_sign:+d} * G_u/G_q")
        return bt

    def build_ma(self) -> ma.MongeAmpereSystem:
        return ma.from_coefficients(
            *(self.defn.body[key] for key in ("A", "B", "C", "D", "E")),
            chart=self.defn.chart,
            spec=self.spec,
        )

    def build_section(self) -> bk.CoframeSection:
        forms = [
            _coefficient_form(self.defn, self.defn.body[key], f"[section] {key}")
            for key in SECTION_KEYS
        ]
        return bk.CoframeSection(self.defn.chart, *forms)

    def candidate_form(self, key: str, default_coord: str):
        if key in self.defn.candidates:
            return _coefficient_form(
                self.defn, self.defn.candidates[key], f"[candidates] {key}"
            )
        return fm.d_coord(self.defn.chart, default_coord)

    def candidate_field(self, key: str, default_coord: str):
        if key in self.defn.candidates:
            return _vector_field(
                self.defn, self.defn.candidates[key], f"[candidates] {key}"
            )
        return fm.VectorField.coordinate(self.defn.chart, default_coord)

    def section_record(self, section: bk.CoframeSection) -> bool:
        """Validate and record; returns True when the section holds up."""
        try:
            report = bk.validate_section(section, self.spec)
            ok = True
        except bk.SectionValidationError as err:
            report = err.report
            ok = False
        self.records.append(
            _record(
                "section_valid",
                "pass" if ok else "fail",
                samples=report.samples,
                max_violation=float(
                    max(report.structural_violation, report.normalization_violation)
                ),
                witness=report.witness.flat() if report.witness else "",
            )
        )
        return ok

    def report(self, command: str) -> dict:
        out = {
            "version": __version__,
            "command": command,
            "input": self.args.file,
            "input_digest": _digest(self.args.file),
            "kind": self.defn.kind,
            "samples": self.samples,
            "tol": self.tol,
            "seed": self.seed,
            "records": self.records,
            "notes": "; ".join(self.notes),
        }
        out.update(self.extras)
        return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_check(runner: _Runner) -> None:
    kind = runner.defn.kind
    if kind == "bt":
        bt = runner.build_bt()
        section_ok = runner.section_record(bt.section)
        for name, result in bk.integrable_extension_checks(bt, runner.spec).items():
            runner.records.append(
                _record_from_check(f"integrable_extension_{name}", result)
            )
        if section_ok:
            torsion = bk.extract_torsion(bt.section, spec=runner.spec)
            runner.records.append(
                _record(
                    "normal",
                    "pass" if bk.check_normal(torsion) else "fail",
                    samples=len(torsion.points),
                )
            )
            for label, margin in bk.normal_margins(torsion).items():
                runner.extras[f"margin_{label}"] = margin
        else:
            runner.records.append(
                _record("normal", "error", witness="section invalid, torsion skipped")
            )
        runner.records.append(
            _record_from_check("dropF_condition", bt.report.df_residual)
        )
        runner.records.append(
            _record_from_check("dropG_condition", bt.report.dg_residual)
        )
    elif kind == "ma":
        system = runner.build_ma()
        runner.records.append(
            _record_from_check("monge_ampere_valid", ma.validate(system, runner.spec))
        )
    elif kind == "section":
        runner.section_record(runner.build_section())
    else:  # tzitzeica seed: does h satisfy (ln h)_xy = h - h^-2
        h = _body_expr(runner.defn, "h")
        residual = ex.sub(
            ex.differentiate(ex.differentiate(ex.ln(h), "x"), "y"),
            ex.sub(h, ex.pow_int(h, -2)),
        )
        runner.records.append(
            _record_from_check(
                "seed_solves_equation", ex.equiv_random(residual, ex.ZERO, runner.spec)
            )
        )


def cmd_classify(runner: _Runner) -> None:
    runner.require_kind("bt")
    bt = runner.build_bt()
    eta1 = runner.candidate_form("eta1", "x")
    eta3 = runner.candidate_form("eta3", "y")
    X = runner.candidate_field("X", "x")
    Y = runner.candidate_field("Y", "y")
    try:
        wavelike = bk.check_wavelike(bt.section, eta1, eta3, runner.spec)
    except bk.SubbundleError as err:
        wavelike = False
        runner.notes.append(str(err))
    runner.extras["wavelike"] = wavelike
    runner.extras["quasilinear"] = bk.check_quasilinear(bt, runner.spec)
    runner.extras["autonomous"] = bk.check_autonomous(bt, X, Y, runner.spec)
    runner.extras["transversality_det_min"] = bk.transversality_det(
        bt, X, Y, runner.spec
    )
    runner.records.append(
        _record("classification", "pass", samples=runner.samples)
    )


def _at_point(runner: _Runner) -> Optional[list]:
    if runner.args.at is None:
        return None
    chart = runner.defn.chart
    bindings = {}
    for item in runner.args.at.split(","):
        if "=" not in item:
            raise DefinitionError(f"--at needs k=v pairs, got {item!r}")
        key, value = item.split("=", 1)
        bindings[key.strip()] = _parse_float(value.strip(), f"--at {key.strip()}")
    coords = {}
    for name in chart.coords:
        if name not in bindings:
            raise DefinitionError(f"--at is missing coordinate {name}")
        coords[name] = bindings.pop(name)
    params = {}
    for name, value in chart.params.items():
        if name in bindings:
            params[name] = bindings.pop(name)
        elif isinstance(value, tuple):
            raise DefinitionError(f"--at must fix ranged parameter {name}")
        else:
            params[name] = float(value)
    if bindings:
        raise DefinitionError(f"--at has unknown names {sorted(bindings)}")
    return [ex.Point(coords, params)]


def cmd_torsion(runner: _Runner) -> None:
    runner.require_kind("bt", "section")
    if runner.defn.kind == "bt":
        section = runner.build_bt().section
    else:
        section = runner.build_section()
    points = _at_point(runner)
    torsion = bk.extract_torsion(section, points=points, spec=runner.spec)
    for name in bk.TORSION_NAMES:
        values = torsion.values[name]
        if points is not None:
            runner.extras[name] = float(values[0])
        else:
            runner.extras[f"{name}_min"] = float(np.min(values))
            runner.extras[f"{name}_max"] = float(np.max(values))
    runner.extras["points"] = len(torsion.points)
    runner.records.append(
        _record(
            "normal",
            "pass" if bk.check_normal(torsion) else "fail",
            samples=len(torsion.points),
        )
    )


def cmd_hyperbolic(runner: _Runner) -> None:
    runner.require_kind("ma")
    system = runner.build_ma()
    report = ma.hyperbolicity(system, runner.spec)
    runner.extras["verdict"] = report.verdict
    for label in ("hyperbolic", "parabolic", "non-hyperbolic"):
        count = sum(1 for s in report.samples if s.label == label)
        runner.extras[f"n_{label.replace('-', '_')}"] = count
    if report.hyperbolic:
        roots = sorted(float(r) for r in report.samples[0].roots)
        runner.extras["roots_at_first_sample"] = ",".join(repr(r) for r in roots)
    runner.records.append(
        _record(
            "hyperbolic",
            "pass" if report.hyperbolic else "fail",
            samples=len(report.samples),
        )
    )


def _grid_from_args(args) -> pp.Grid:
    try:
        nx, ny = (int(part) for part in args.grid.split(","))
        x0, x1, y0, y1 = (float(part) for part in args.domain.split(","))
    except ValueError as err:
        raise DefinitionError(f"bad --grid/--domain: {err}") from None
    try:
        return pp.Grid(nx, ny, x0, x1, y0, y1)
    except ValueError as err:
        raise DefinitionError(f"bad --grid/--domain: {err}") from None


def cmd_propagate(runner: _Runner) -> None:
    runner.require_kind("bt")
    bt = runner.build_bt()
    grid = _grid_from_args(runner.args)
    try:
        result = pp.bt_propagate(bt, runner.args.seed_u, runner.args.v0, grid)
        if runner.args.reference is not None:
            reference = pp.sample_field(
                runner.args.reference, grid, params=pp._fixed_params(bt.chart)
            )
            runner.extras["sup_error"] = float(
                np.max(np.abs(result.v.values - reference.values))
            )
    except pp.PropagationError as err:
        runner.records.append(_record("propagation", "error", witness=str(err)))
        return
    pp.write_field_csv(result.v, runner.args.out)
    runner.extras["out"] = runner.args.out
    runner.extras["compatibility_residual"] = result.compatibility_residual
    runner.records.append(_record("propagation", "pass", samples=grid.nx * grid.ny))


def cmd_tzitzeica(runner: _Runner) -> None:
    runner.require_kind("tzitzeica")
    grid = _grid_from_args(runner.args)
    body = runner.defn.body
    lam = _parse_float(body["lambda"], "[tzitzeica] lambda")
    alpha0 = _parse_float(body["alpha0"], "[tzitzeica] alpha0")
    beta0 = _parse_float(body["beta0"], "[tzitzeica] beta0")
    h = _body_expr(runner.defn, "h")
    try:
        result = pp.tzitzeica_propagate(h, lam, alpha0, beta0, grid)
    except pp.PropagationError as err:
        runner.records.append(_record("propagation", "error", witness=str(err)))
        return
    pp.write_field_csv(result.h_prime, runner.args.out_hprime)
    runner.extras["out_hprime"] = runner.args.out_hprime
    runner.extras["alpha_compatibility"] = result.alpha_compatibility
    runner.extras["beta_compatibility"] = result.beta_compatibility
    runner.extras["singular_nodes"] = result.singular_count
    try:
        residual = pp.tzitzeica_residual(result.h_prime)
        runner.extras["h_prime_max_residual"] = residual.max_residual
        runner.extras["h_prime_mean_residual"] = residual.mean_residual
    except pp.SingularFieldError:
        runner.notes.append("h' residual skipped: no usable interior nodes")
    runner.records.append(_record("propagation", "pass", samples=grid.nx * grid.ny))


COMMANDS = {
    "check": cmd_check,
    "classify": cmd_classify,
    "torsion": cmd_torsion,
    "hyperbolic": cmd_hyperbolic,
    "propagate": cmd_propagate,
    "tzitzeica": cmd_tzitzeica,
}


# ---------------------------------------------------------------------------
# argument parsing and entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edsbt",
        description="checks, classification, and solution generation for "
        "hyperbolic exterior differential systems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("file", help="system definition file")
        p.add_argument("--samples", type=int, default=None)
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--json", default=None, help="also write the report here")
        return p

    common(sub.add_parser("check", help="verify the defining conditions"))
    common(sub.add_parser("classify", help="wavelike/quasilinear/autonomous verdicts"))
    p = common(sub.add_parser("torsion", help="extract the torsion functions"))
    p.add_argument("--at", default=None, help="k=v,... point instead of sampling")
    common(sub.add_parser("hyperbolic", help="classify the pencil"))
    p = common(sub.add_parser("propagate", help="generate a companion solution grid"))
    p.add_argument("--seed-u", required=True, dest="seed_u")
    p.add_argument("--v0", type=float, required=True)
    p.add_argument("--grid", required=True, help="NX,NY")
    p.add_argument("--domain", required=True, help="X0,X1,Y0,Y1")
    p.add_argument("--out", required=True)
    p.add_argument("--reference", default=None)
    p = common(sub.add_parser("tzitzeica", help="run the auxiliary hyperbolic system"))
    p.add_argument("--grid", required=True, help="NX,NY")
    p.add_argument("--domain", required=True, help="X0,X1,Y0,Y1")
    p.add_argument("--out-hprime", required=True, dest="out_hprime")
    return parser


def _emit(report: dict, json_path: Optional[str]) -> None:
    payload = json.dumps(report, sort_keys=True, indent=2) + "\n"
    sys.stdout.write(payload)
    if json_path:
        tmp = json_path + ".tmp"
        with open(tmp, "w") as fh:
            fh.write(payload)
        os.replace(tmp, json_path)


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        runner = _Runner(args)
        COMMANDS[args.command](runner)
    except DefinitionError as err:
        print(f"edsbt: {err}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, ArithmeticError, OSError) as err:
        print(f"edsbt: {err}", file=sys.stderr)
        return 1
    report = runner.report(args.command)
    _emit(report, args.json)
    failed = any(rec["status"] != "pass" for rec in report["records"])
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
