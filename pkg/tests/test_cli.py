"""End-to-end tests for the command line: definition parsing, report
shape and reproducibility, exit codes, and the propagation commands.

main() is called in-process; stdout is captured as the report channel.
"""

import hashlib
import json
import math
import os

import numpy as np
import pytest

import edsbt.cli as cli
import edsbt.propagate as pp


SG_DEF = """\
# auto-transformation for u_xy = sin u
[chart]
coords = x, y, u, v, p, q
x = -1.5, 1.5
y = -1.5, 1.5
u = -1.5, 1.5
v = -1.5, 1.5
p = -1.5, 1.5
q = -1.5, 1.5

[params]
lam = 1.0

[bt]
F = p + 2*lam*sin((u + v)/2)
G = -q + (2/lam)*sin((u - v)/2)
"""

COUPLED_DEF = SG_DEF.split("[bt]")[0] + "[bt]\nF = p + u*v\nG = -q + u*v\n"

MA_CHART = """\
[chart]
coords = x, y, u, p, q
x = -1.5, 1.5
y = -1.5, 1.5
u = -1.5, 1.5
p = -1.5, 1.5
q = -1.5, 1.5
"""

SG_MA_DEF = MA_CHART + """
[ma]
A = 0
B = 1
C = 0
D = 0
E = -sin(u)
"""

LAPLACE_DEF = MA_CHART + """
[ma]
A = 1
B = 0
C = 1
D = 0
E = 0
"""

TZ_DEF = """\
[chart]
coords = x, y
x = 0, 0.5
y = 0, 0.5

[tzitzeica]
h = 1
lambda = 1
alpha0 = 1
beta0 = 1
"""

# the adapted coframe written out in closed form, coefficients in
# d(x, y, u, v, p, q) order
SECTION_DEF = SG_DEF.split("[bt]")[0] + """\
[section]
theta = -(p + 2*lam*sin((u + v)/2)), -q, 1, 0, 0, 0
theta_bar = -p, q - (2/lam)*sin((u - v)/2), 0, 1, 0, 0
w1 = 1, 0, 0, 0, 0, 0
w2 = -lam*cos((u + v)/2)*p, -sin(v) - lam*cos((u + v)/2)*(-q + (2/lam)*sin((u - v)/2)), 0, lam*cos((u + v)/2), 1, 0
w3 = 0, 1, 0, 0, 0, 0
w4 = -sin(u) + (1/lam)*cos((u - v)/2)*(p + 2*lam*sin((u + v)/2)), (1/lam)*cos((u - v)/2)*q, -(1/lam)*cos((u - v)/2), 0, 0, 1
"""

AT_REFERENCE = "x=0,y=0,u=1.5707963267948966,v=0,p=0.3,q=0.7"


def write_def(tmp_path, text, name="system.def"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr().out
    return code, (json.loads(out) if out else None)


class TestDefinitionParsing:
    def test_bt_definition(self, tmp_path):
        defn = cli.parse_definition(write_def(tmp_path, SG_DEF))
        assert defn.kind == "bt"
        assert defn.chart.coords == ("x", "y", "u", "v", "p", "q")
        assert defn.chart.params == {"lam": 1.0}
        assert set(defn.body) == {"F", "G"}

    def test_ranged_param(self, tmp_path):
        text = SG_DEF.replace("lam = 1.0", "lam = [0.5, 2]")
        defn = cli.parse_definition(write_def(tmp_path, text))
        assert defn.chart.params == {"lam": (0.5, 2.0)}

    def test_spec_block(self, tmp_path):
        text = SG_DEF + "\n[spec]\nsamples = 8\ntol = 1e-7\nseed = 5\n"
        defn = cli.parse_definition(write_def(tmp_path, text))
        assert defn.spec_overrides == {"samples": 8, "tol": 1e-7, "seed": 5}

    def test_comments_stripped_anywhere(self, tmp_path):
        text = SG_DEF.replace("lam = 1.0", "lam = 1.0  # coupling")
        defn = cli.parse_definition(write_def(tmp_path, text))
        assert defn.chart.params == {"lam": 1.0}

    @pytest.mark.parametrize(
        "mangle",
        [
            lambda t: t.replace("[params]", "[junk]"),  # unknown block
            lambda t: t + "\n[bt]\nF = p\nG = -q\n",  # duplicate block
            lambda t: "stray = 1\n" + t,  # entry before any header
            lambda t: t.replace("lam = 1.0", "lam 1.0"),  # missing =
            lambda t: t.replace("F = ", "G = ").replace("G = -q", "G: -q"),
            lambda t: t.replace("[chart]\n", "[chart]\nxx = 0, 1\n", 1) and t.replace("coords = x, y, u, v, p, q\n", ""),
            lambda t: t.replace("x = -1.5, 1.5\n", ""),  # missing interval
            lambda t: t.replace("x = -1.5, 1.5", "x = -1.5"),  # short interval
            lambda t: t.replace("x = -1.5, 1.5", "x = lo, 1.5"),  # not a number
            lambda t: t + "\n[tzitzeica]\nh = 1\nlambda = 1\nalpha0 = 1\nbeta0 = 1\n",
            lambda t: t.split("[bt]")[0],  # no primary block
            lambda t: t.replace("coords = x, y, u, v, p, q", "coords = x, y, u, p, q").replace("v = -1.5, 1.5\n", ""),
            lambda t: t.replace("G = -q + (2/lam)*sin((u - v)/2)\n", ""),  # missing G
            lambda t: t + "\n[spec]\nsamples = few\n",
            lambda t: t.replace("F = p + 2*lam*sin((u + v)/2)", "F = p + 2*lam*sin((u + w)/2)"),  # unknown name
        ],
    )
    def test_malformed_definitions(self, tmp_path, mangle):
        with pytest.raises(cli.DefinitionError):
            cli.parse_definition(write_def(tmp_path, mangle(SG_DEF)))

    def test_missing_file(self, tmp_path):
        with pytest.raises(cli.DefinitionError):
            cli.parse_definition(str(tmp_path / "absent.def"))

    def test_repeated_key_rejected(self, tmp_path):
        text = SG_DEF + "G = -q\n"
        with pytest.raises(cli.DefinitionError):
            cli.parse_definition(write_def(tmp_path, text))


class TestExitCodes:
    def test_pass_is_zero(self, tmp_path, capsys):
        code, _ = run(capsys, "check", write_def(tmp_path, SG_DEF), "--samples", "8")
        assert code == 0

    def test_fail_is_one(self, tmp_path, capsys):
        code, _ = run(capsys, "check", write_def(tmp_path, COUPLED_DEF), "--samples", "8")
        assert code == 1

    def test_parse_error_is_two(self, tmp_path, capsys):
        code, report = run(capsys, "check", write_def(tmp_path, SG_DEF.split("[bt]")[0]))
        assert code == 2
        assert report is None

    def test_wrong_kind_is_two(self, tmp_path, capsys):
        code, _ = run(capsys, "classify", write_def(tmp_path, TZ_DEF))
        assert code == 2

    def test_usage_error_is_two(self):
        with pytest.raises(SystemExit) as info:
            cli.main(["propagate", "whatever.def"])  # missing required flags
        assert info.value.code == 2

    def test_unknown_command_is_two(self):
        with pytest.raises(SystemExit) as info:
            cli.main(["bogus", "whatever.def"])
        assert info.value.code == 2


class TestCheckCommand:
    def test_report_shape_and_records(self, tmp_path, capsys):
        path = write_def(tmp_path, SG_DEF)
        code, report = run(capsys, "check", path, "--samples", "16")
        assert code == 0
        assert report["version"]
        assert report["kind"] == "bt"
        assert report["samples"] == 16
        digest = hashlib.sha256(open(path, "rb").read()).hexdigest()
        assert report["input_digest"] == f"sha256:{digest}"
        names = [r["name"] for r in report["records"]]
        assert names == [
            "section_valid",
            "integrable_extension_dtheta",
            "integrable_extension_dtheta_bar",
            "normal",
            "dropF_condition",
            "dropG_condition",
        ]
        assert all(r["status"] == "pass" for r in report["records"])
        assert report["margin_A1"] == pytest.approx(1.0)
        assert report["margin_A2"] == pytest.approx(1.0)
        assert report["margin_A1A2_minus_1"] == pytest.approx(2.0)
        assert "+1 * F_v/F_p" in report["notes"]
        assert "+1 * G_u/G_q" in report["notes"]

    def test_report_is_flat(self, tmp_path, capsys):
        _, report = run(capsys, "check", write_def(tmp_path, SG_DEF), "--samples", "8")
        for key, value in report.items():
            if key == "records":
                for rec in value:
                    assert all(
                        isinstance(v, (str, int, float, bool)) for v in rec.values()
                    )
            else:
                assert isinstance(value, (str, int, float, bool)), key

    def test_fail_records_carry_witness(self, tmp_path, capsys):
        code, report = run(
            capsys, "check", write_def(tmp_path, COUPLED_DEF), "--samples", "8"
        )
        assert code == 1
        failed = [r for r in report["records"] if r["status"] == "fail"]
        assert failed
        assert all(r["witness"] for r in failed)
        assert all(r["max_violation"] > 1e-2 for r in failed)

    def test_ma_check(self, tmp_path, capsys):
        code, report = run(capsys, "check", write_def(tmp_path, SG_MA_DEF), "--samples", "8")
        assert code == 0
        assert [r["name"] for r in report["records"]] == ["monge_ampere_valid"]

    def test_section_check(self, tmp_path, capsys):
        code, report = run(
            capsys, "check", write_def(tmp_path, SECTION_DEF), "--samples", "8"
        )
        assert code == 0
        assert report["records"][0]["name"] == "section_valid"
        assert report["records"][0]["max_violation"] < 1e-9

    def test_tzitzeica_seed_check(self, tmp_path, capsys):
        # h == 1 solves (ln h)_xy = h - h^-2; h == 2 misses by 7/4
        code, report = run(capsys, "check", write_def(tmp_path, TZ_DEF), "--samples", "8")
        assert code == 0
        assert report["records"][0]["name"] == "seed_solves_equation"

        bad = TZ_DEF.replace("h = 1", "h = 2")
        code, report = run(capsys, "check", write_def(tmp_path, bad, "bad.def"), "--samples", "8")
        assert code == 1
        rec = report["records"][0]
        assert rec["status"] == "fail"
        assert rec["witness"]


class TestClassifyCommand:
    def test_default_candidates(self, tmp_path, capsys):
        code, report = run(capsys, "classify", write_def(tmp_path, SG_DEF), "--samples", "16")
        assert code == 0
        assert report["wavelike"] is True
        assert report["quasilinear"] is True
        assert report["autonomous"] is True
        assert report["transversality_det_min"] == pytest.approx(1.0)

    def test_explicit_candidates_match_defaults(self, tmp_path, capsys):
        text = SG_DEF + (
            "\n[candidates]\n"
            "eta1 = 1, 0, 0, 0, 0, 0\n"
            "eta3 = 0, 1, 0, 0, 0, 0\n"
            "X = 1, 0, 0, 0, 0, 0\n"
            "Y = 0, 1, 0, 0, 0, 0\n"
        )
        code, report = run(capsys, "classify", write_def(tmp_path, text), "--samples", "16")
        assert code == 0
        assert report["wavelike"] and report["autonomous"]

    def test_false_verdict_still_exits_zero(self, tmp_path, capsys):
        # F_p G_q = -(1 + p^2) depends on p, so quasilinear must be false
        text = SG_DEF.replace(
            "F = p + 2*lam*sin((u + v)/2)",
            "F = p + p^3/3 + 2*lam*sin((u + v)/2)",
        )
        code, report = run(capsys, "classify", write_def(tmp_path, text), "--samples", "16")
        assert code == 0
        assert report["quasilinear"] is False
        assert report["records"][0]["status"] == "pass"

    def test_candidate_outside_block_reads_as_not_wavelike(self, tmp_path, capsys):
        text = SG_DEF + "\n[candidates]\neta1 = 0, 0, 1, 0, 0, 0\n"  # du
        code, report = run(capsys, "classify", write_def(tmp_path, text), "--samples", "8")
        assert code == 0
        assert report["wavelike"] is False
        assert "eta1" in report["notes"]


class TestTorsionCommand:
    def test_at_reference_point(self, tmp_path, capsys):
        code, report = run(
            capsys, "torsion", write_def(tmp_path, SG_DEF), "--at", AT_REFERENCE
        )
        assert code == 0
        root2 = math.sqrt(2.0)
        assert report["points"] == 1
        assert report["A1"] == pytest.approx(1.0, abs=1e-12)
        assert report["A2"] == pytest.approx(-1.0, abs=1e-12)
        assert report["B2"] == pytest.approx(-root2 / 4, abs=1e-12)
        assert report["B4"] == pytest.approx(root2 / 4, abs=1e-12)
        assert report["C2"] == pytest.approx(-root2 / 2, abs=1e-12)
        assert report["C4"] == pytest.approx(-root2 / 2, abs=1e-12)
        for name in ("B1", "B3", "C1", "C3"):
            assert report[name] == pytest.approx(0.0, abs=1e-12)

    def test_sampled_table(self, tmp_path, capsys):
        code, report = run(capsys, "torsion", write_def(tmp_path, SG_DEF), "--samples", "16")
        assert code == 0
        assert report["points"] == 16
        assert report["A1_min"] == pytest.approx(1.0, abs=1e-9)
        assert report["A1_max"] == pytest.approx(1.0, abs=1e-9)
        assert report["A2_min"] == pytest.approx(-1.0, abs=1e-9)
        for name in ("B1", "B3", "C1", "C3"):
            assert abs(report[f"{name}_min"]) < 1e-9
            assert abs(report[f"{name}_max"]) < 1e-9
        assert report["records"][0]["name"] == "normal"
        assert report["records"][0]["status"] == "pass"

    def test_section_definition_accepted(self, tmp_path, capsys):
        code, report = run(
            capsys, "torsion", write_def(tmp_path, SECTION_DEF), "--at", AT_REFERENCE
        )
        assert code == 0
        assert report["A1"] == pytest.approx(1.0, abs=1e-12)
        assert report["C2"] == pytest.approx(-math.sqrt(2.0) / 2, abs=1e-12)

    def test_at_requires_all_coordinates(self, tmp_path, capsys):
        code, _ = run(capsys, "torsion", write_def(tmp_path, SG_DEF), "--at", "x=0,y=0")
        assert code == 2

    def test_at_must_fix_ranged_parameter(self, tmp_path, capsys):
        text = SG_DEF.replace("lam = 1.0", "lam = [0.5, 2]")
        path = write_def(tmp_path, text)
        code, _ = run(capsys, "torsion", path, "--at", AT_REFERENCE)
        assert code == 2
        code, report = run(capsys, "torsion", path, "--at", AT_REFERENCE + ",lam=1")
        assert code == 0
        assert report["A1"] == pytest.approx(1.0, abs=1e-12)

    def test_at_rejects_unknown_names(self, tmp_path, capsys):
        code, _ = run(
            capsys, "torsion", write_def(tmp_path, SG_DEF), "--at", AT_REFERENCE + ",zz=1"
        )
        assert code == 2


class TestHyperbolicCommand:
    def test_sine_gordon_layout(self, tmp_path, capsys):
        code, report = run(capsys, "hyperbolic", write_def(tmp_path, SG_MA_DEF), "--samples", "16")
        assert code == 0
        assert report["verdict"] == "hyperbolic"
        assert report["n_hyperbolic"] == 16
        assert report["roots_at_first_sample"] == "-0.5,0.5"

    def test_laplace_fails(self, tmp_path, capsys):
        code, report = run(capsys, "hyperbolic", write_def(tmp_path, LAPLACE_DEF), "--samples", "16")
        assert code == 1
        assert report["verdict"] == "non-hyperbolic"
        assert report["n_non_hyperbolic"] == 16
        assert "roots_at_first_sample" not in report


class TestPropagateCommand:
    def test_kink_end_to_end(self, tmp_path, capsys):
        out = str(tmp_path / "v.csv")
        code, report = run(
            capsys,
            "propagate", write_def(tmp_path, SG_DEF),
            "--seed-u", "0", "--v0", repr(math.pi),
            "--grid", "41,41", "--domain", "0,2,0,2",
            "--out", out,
            "--reference", "4*atan(exp(-lam*x - y/lam))",
        )
        assert code == 0
        assert report["records"][0]["status"] == "pass"
        assert report["sup_error"] < 1e-6
        assert report["compatibility_residual"] == 0.0
        field = pp.read_field_csv(out)
        assert field.grid == pp.Grid(41, 41, 0.0, 2.0, 0.0, 2.0)
        assert abs(field.values[0, 0] - math.pi) < 1e-12

    def test_ranged_parameter_is_runtime_error(self, tmp_path, capsys):
        text = SG_DEF.replace("lam = 1.0", "lam = [0.5, 2]")
        code, report = run(
            capsys,
            "propagate", write_def(tmp_path, text),
            "--seed-u", "0", "--v0", "1",
            "--grid", "5,5", "--domain", "0,1,0,1",
            "--out", str(tmp_path / "v.csv"),
        )
        assert code == 1
        rec = report["records"][0]
        assert rec["status"] == "error"
        assert "lam" in rec["witness"]
        assert not (tmp_path / "v.csv").exists()

    def test_bad_grid_is_usage_error(self, tmp_path, capsys):
        code, _ = run(
            capsys,
            "propagate", write_def(tmp_path, SG_DEF),
            "--seed-u", "0", "--v0", "1",
            "--grid", "5x5", "--domain", "0,1,0,1",
            "--out", str(tmp_path / "v.csv"),
        )
        assert code == 2


class TestTzitzeicaCommand:
    def test_fixed_point_end_to_end(self, tmp_path, capsys):
        out = str(tmp_path / "hp.csv")
        code, report = run(
            capsys,
            "tzitzeica", write_def(tmp_path, TZ_DEF),
            "--grid", "41,41", "--domain", "0,0.5,0,0.5",
            "--out-hprime", out,
        )
        assert code == 0
        assert report["alpha_compatibility"] == 0.0
        assert report["beta_compatibility"] == 0.0
        assert report["singular_nodes"] == 0
        assert report["h_prime_max_residual"] == 0.0
        field = pp.read_field_csv(out)
        assert np.all(field.values == 1.0)

    def test_degenerate_coupling_is_runtime_error(self, tmp_path, capsys):
        text = TZ_DEF.replace("lambda = 1", "lambda = 0")
        code, report = run(
            capsys,
            "tzitzeica", write_def(tmp_path, text),
            "--grid", "5,5", "--domain", "0,0.5,0,0.5",
            "--out-hprime", str(tmp_path / "hp.csv"),
        )
        assert code == 1
        assert report["records"][0]["status"] == "error"


class TestReproducibility:
    def test_identical_runs_identical_bytes(self, tmp_path, capsys):
        path = write_def(tmp_path, SG_DEF)
        cli.main(["check", path, "--samples", "8"])
        first = capsys.readouterr().out
        cli.main(["check", path, "--samples", "8"])
        second = capsys.readouterr().out
        assert first == second

    def test_env_seed_changes_samples(self, tmp_path, capsys, monkeypatch):
        path = write_def(tmp_path, SG_DEF)
        cli.main(["torsion", path, "--samples", "8"])
        base = capsys.readouterr().out
        monkeypatch.setenv("EDSBT_SEED", "5")
        cli.main(["torsion", path, "--samples", "8"])
        seeded = capsys.readouterr().out
        assert json.loads(seeded)["seed"] == 5
        assert base != seeded

    def test_flag_beats_env_beats_file(self, tmp_path, capsys, monkeypatch):
        path = write_def(tmp_path, SG_DEF + "\n[spec]\nseed = 9\n")
        _, report = run(capsys, "check", path, "--samples", "4")
        assert report["seed"] == 9
        monkeypatch.setenv("EDSBT_SEED", "5")
        _, report = run(capsys, "check", path, "--samples", "4")
        assert report["seed"] == 5
        _, report = run(capsys, "check", path, "--samples", "4", "--seed", "3")
        assert report["seed"] == 3

    def test_bad_env_seed_is_usage_error(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("EDSBT_SEED", "soon")
        code, _ = run(capsys, "check", write_def(tmp_path, SG_DEF), "--samples", "4")
        assert code == 2

    def test_json_file_matches_stdout(self, tmp_path, capsys):
        path = write_def(tmp_path, SG_DEF)
        target = tmp_path / "report.json"
        cli.main(["check", path, "--samples", "8", "--json", str(target)])
        out = capsys.readouterr().out
        assert target.read_text() == out
        assert not (tmp_path / "report.json.tmp").exists()

    def test_spec_block_drives_defaults(self, tmp_path, capsys):
        path = write_def(tmp_path, SG_DEF + "\n[spec]\nsamples = 4\ntol = 1e-7\n")
        _, report = run(capsys, "check", path)
        assert report["samples"] == 4
        assert report["tol"] == 1e-7
        assert report["records"][0]["samples"] == 4
