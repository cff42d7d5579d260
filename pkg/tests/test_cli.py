import json
import os

import pytest

from multipolar import cli
from multipolar.core import BoundedTailSpec, Pole, PotentialSpec
from multipolar.errors import UsageError

QUICK_MESH = {"truncation_radius": 10.0, "base_cells_per_axis": 8, "pole_refine_depth": 4}


def write_config(tmp_path, name, spec, **blocks):
    path = tmp_path / name
    path.write_text(json.dumps({**spec.to_dict(), **blocks}))
    return str(path)


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr().out
    return code, json.loads(out) if out else None


class TestParse:
    def test_examples(self):
        c = cli.parse(["classify", "--dim", "3", "--masses", "0.2,0.2,-1.3"])
        assert c.verb == "classify" and c.options["masses"] == [0.2, 0.2, -1.3]
        c = cli.parse(["mu", "--config", "two_pole.json", "--mesh", "default"])
        assert c.verb == "mu" and c.input == "two_pole.json"

    def test_unknown_verb(self):
        with pytest.raises(UsageError):
            cli.parse(["frobnicate"])

    @pytest.mark.parametrize("argv", [
        [],
        ["classify", "--dim", "3", "--masses", "0.1", "--bogus"],
        ["classify", "--dim", "3"],
        ["certify", "--mode", "separation", "--config", "a.json"],
        ["certify", "--mode", "infinity", "--config", "a.json"],
        ["certify"],
        ["sa-check", "--dim", "3"],
        ["experiment", "--name", "continuity"],
        ["experiment", "--name", "necessity"],
        ["spectrum", "--config", "a.json", "--k", "0"],
        ["classify", "--dim", "3", "--masses", "a,b"],
    ])
    def test_usage_errors(self, argv):
        with pytest.raises(UsageError):
            cli.parse(argv)

    def test_usage_exit_code(self, capsys):
        code, out = run(["classify", "--dim", "3", "--masses", "0.1", "--bogus"], capsys)
        assert code == 2 and out["error"]["type"] == "UsageError" and out["schema"] == "1"

    def test_negative_values(self):
        c = cli.parse(["sa-check", "--dim", "3", "--masses", "-1,-0.5", "--mass", "-2"])
        assert c.options["masses"] == [-1.0, -0.5] and c.options["mass"] == [-2.0]

    def test_missing_config_file(self, capsys, tmp_path):
        code, out = run(["mu", "--config", str(tmp_path / "nope.json")], capsys)
        assert code == 2


class TestVerbs:
    def test_classify(self, capsys):
        code, out = run(["classify", "--dim", "3", "--masses", "0.2,0.2,-1.3"], capsys)
        assert code == 0 and out["schema"] == "1"
        assert out["results"] == {"positivity": True, "zero_eigenvalue": True, "self_adjoint": False,
                                  "l2_decay": True}

    def test_sa_check(self, capsys):
        code, out = run(["sa-check", "--dim", "3", "--mass", "-1"], capsys)
        assert code == 0 and out["results"]["self_adjoint"] is True
        code, out = run(["sa-check", "--dim", "3", "--masses", "-1,-0.5", "--ode-verify"], capsys)
        rows = out["results"]["poles"]
        assert [r["self_adjoint"] for r in rows] == [True, False]
        assert all(r["consistent"] for r in rows)

    def test_mu_zero_potential(self, capsys, tmp_path):
        cfg = write_config(tmp_path, "empty.json", PotentialSpec.empty(3))
        code, out = run(["mu", "--config", cfg], capsys)
        assert code == 0 and out["results"]["value"] == 1.0
        assert out["results"]["refinement_history"]

    def test_mu_single_pole_with_history(self, capsys, tmp_path):
        cfg = write_config(tmp_path, "one.json", PotentialSpec.single(0.1), mesh=QUICK_MESH)
        code, out = run(["mu", "--config", cfg, "--levels", "2"], capsys)
        hist = out["results"]["refinement_history"]
        assert code == 0 and len(hist) == 2
        assert 0.6 <= out["results"]["value"] <= 0.61

    def test_mu_exports_matrices(self, capsys, tmp_path):
        cfg = write_config(tmp_path, "one.json", PotentialSpec.single(0.1), mesh=QUICK_MESH)
        prefix = str(tmp_path / "pencil")
        code, _ = run(["mu", "--config", cfg, "--export-matrices", prefix], capsys)
        assert code == 0 and os.path.exists(prefix + "_B_V.mtx")

    def test_reruns_are_identical(self, capsys, tmp_path):
        cfg = write_config(tmp_path, "one.json", PotentialSpec.single(0.1), mesh=QUICK_MESH)
        outs = []
        for _ in range(2):
            cli.main(["mu", "--config", cfg])
            d = json.loads(capsys.readouterr().out)
            d.pop("timings")
            outs.append(cli.dumps(d))
        assert outs[0] == outs[1]

    def test_hash_ignores_output_paths(self, tmp_path):
        cfg = write_config(tmp_path, "one.json", PotentialSpec.single(0.1))
        a = cli.parse(["mu", "--config", cfg])
        b = cli.parse(["mu", "--config", cfg, "--out", str(tmp_path / "x.json")])
        raw = json.loads(open(cfg).read())
        assert cli.config_hash(a, raw) == cli.config_hash(b, raw)
        c = cli.parse(["mu", "--config", cfg, "--levels", "2"])
        assert cli.config_hash(a, raw) != cli.config_hash(c, raw)

    def test_certify_and_recheck(self, capsys, tmp_path):
        spec = PotentialSpec(3, (Pole((-1.0, 0, 0), 0.2), Pole((1.0, 0, 0), 0.2)), 0.1, 2.0)
        cfg = write_config(tmp_path, "pair.json", spec)
        out_path = tmp_path / "cert.json"
        code = cli.main(["certify", "--mode", "shattering", "--config", cfg, "--out", str(out_path)])
        assert code == 0
        report = json.loads(out_path.read_text())
        assert report["results"]["accepted"] and report["results"]["delta"] > 0
        code, again = run(["certify", "--recheck", str(out_path)], capsys)
        assert code == 0 and again["results"]["agrees"]

    def test_recheck_of_tampered_certificate(self, capsys, tmp_path):
        spec = PotentialSpec.single(0.1)
        cfg = write_config(tmp_path, "one.json", spec)
        out_path = tmp_path / "cert.json"
        assert cli.main(["certify", "--mode", "infinity", "--gamma", "0.1", "--config", cfg,
                         "--out", str(out_path)]) == 0
        report = json.loads(out_path.read_text())
        report["results"]["certificate"]["min_residual"] *= 1.5
        out_path.write_text(json.dumps(report))
        code, again = run(["certify", "--recheck", str(out_path)], capsys)
        assert code == 3 and not again["results"]["agrees"]

    def test_separation_tail_too_heavy(self, capsys, tmp_path):
        a = write_config(tmp_path, "a.json", PotentialSpec.single(0.15))
        code, out = run(["certify", "--mode", "separation", "--config", a, "--second", a], capsys)
        assert code == 1 and out["results"]["error"]["type"] == "TailTooHeavy"

    def test_module_error_becomes_payload(self, capsys):
        code, out = run(["experiment", "--name", "sufficiency", "--masses", "0.3,0.1"], capsys)
        assert code == 1 and out["results"]["error"]["type"] == "MassOutOfClass"

    def test_spectrum_csv_report(self, capsys, tmp_path):
        spec = PotentialSpec(3, (), 0.0, 1.0, BoundedTailSpec.radial_well(5.0, 1.0, (0, 0, 0)))
        mesh = {"truncation_radius": 8.0, "base_cells_per_axis": 8, "pole_refine_depth": 0,
                "regions": [[[0, 0, 0], 1.2, 1]]}
        cfg = write_config(tmp_path, "well.json", spec, mesh=mesh)
        rep = tmp_path / "spec.json"
        assert cli.main(["spectrum", "--config", cfg, "--k", "2", "--out", str(rep)]) == 0
        data = json.loads(rep.read_text())
        assert data["results"]["negative_count"] == 1
        code, out = run(["report", "--input", str(rep)], capsys)
        lines = out["results"]["text"].strip().split("\n")
        assert lines[0] == "index,value,residual_norm" and len(lines) == 3
        assert float(lines[1].split(",")[1]) < 0

    def test_weyl_with_plot(self, capsys, tmp_path):
        cfg = write_config(tmp_path, "one.json", PotentialSpec.single(0.1))
        svg = tmp_path / "w.svg"
        code, out = run(["weyl", "--config", cfg, "--plot", str(svg)], capsys)
        assert code == 0 and len(out["results"]["rows"]) == 3
        # widths 4, 8, 16: the 8 -> 16 doubling is the one resolved by the envelope
        assert 0.4 <= out["results"]["ratios"][-1] <= 0.7
        assert svg.read_text().startswith("<svg")

    def test_plot_does_not_change_payload(self, capsys, tmp_path):
        cfg = write_config(tmp_path, "one.json", PotentialSpec.single(0.1))
        _, a = run(["weyl", "--config", cfg], capsys)
        _, b = run(["weyl", "--config", cfg, "--plot", str(tmp_path / "p.svg")], capsys)
        assert a["results"] == b["results"] and a["config_hash"] == b["config_hash"]

    def test_necessity_experiment_csv(self, capsys, tmp_path):
        rep = tmp_path / "nec.json"
        assert cli.main(["experiment", "--name", "necessity", "--masses", "0.15,0.15", "--out", str(rep)]) == 0
        data = json.loads(rep.read_text())
        assert data["results"]["report"]["minimum"] <= -0.15
        code, out = run(["report", "--input", str(rep), "--format", "csv"], capsys)
        assert out["results"]["text"].startswith("scale,quotient\n")

    def test_report_rejects_foreign_json(self, capsys, tmp_path):
        p = tmp_path / "x.json"
        p.write_text("{}")
        code, _ = run(["report", "--input", str(p)], capsys)
        assert code == 2


def test_atomic_write_leaves_no_temp_files(tmp_path):
    target = tmp_path / "out.json"
    cli._write_atomic(str(target), "{}\n")
    assert target.read_text() == "{}\n"
    assert os.listdir(tmp_path) == ["out.json"]


def test_dumps_maps_nonfinite_to_null():
    assert json.loads(cli.dumps({"a": float("inf"), "b": [float("nan"), 1.0]})) == {"a": None, "b": [None, 1.0]}
