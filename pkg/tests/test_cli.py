"""Tests for experiment specs, sweep execution, manifests and the command line."""

import csv
import json
from pathlib import Path

import pytest

from src.core import experiment
from src.core.acceptance import compare_report, write_comparison
from src.core.experiment import (
    BUNDLED_SPECS,
    list_specs,
    load_spec,
    parse_spec,
    run_experiment,
    sha256_file,
    write_manifest,
)
from src.core.runner import EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_OK, main
from src.reconstruction.analytic import Scheme, SchemeConfig, mse_approx
from src.reconstruction.errors import SpecError
from src.reconstruction.field import SourceParams
from src.reconstruction.spt import LinkParams

QUICK_SPEC = """\
[experiment]
name = quick
outputs = analytic

[scheme]
schemes = no-infer, syn-infer, asyn-infer
shift_s = 0.03
"""


def write_spec(tmp_path, text, name="spec.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_rows(path, columns, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        writer.writerows(rows)
    return path


@pytest.mark.parametrize("text,line", [
    ("[experiment]\noutputs = analytic\n\n[link]\nsnr = 5\n", 5),
    ("[experiment]\noutputs = analytic\n[weather]\nwind = 3\n", 3),
    ("[experiment]\noutputs = analytic, plots\n", 2),
    ("[experiment]\noutputs = analytic\n[simulate]\nperiods = many\n", 4),
    ("[experiment]\noutputs = analytic\n[scheme]\nschemes = psychic\n", 4),
    ("[experiment]\noutputs = analytic\n[sweep]\nlink.colour = 1, 2\n", 4),
    ("[experiment]\noutputs = regions\n[scheme]\nschemes = syn-infer\n", 4),
    ("[experiment]\noutputs = analytic\n[sweep]\nscheme.period_s = 0.15, 0.005\n", 4),
    ("[experiment]\noutputs = analytic\n[scheme]\nschemes = asyn-infer\n[field]\nsensors = 1\n", 6),
])
def test_spec_errors_carry_line(text, line):
    with pytest.raises(SpecError) as info:
        parse_spec(text)
    assert info.value.line == line


def test_simulate_rejects_virtual_axes():
    text = "[experiment]\noutputs = simulate\n[sweep]\nanalytic.eps_bar = 0, 0.5\n"
    with pytest.raises(SpecError):
        parse_spec(text)


def test_spec_error_message_has_location(tmp_path):
    path = write_spec(tmp_path, "[experiment]\noutputs = analytic\n[link]\nsnr = 5\n")
    with pytest.raises(SpecError, match=r"spec\.ini:4: unknown key 'snr'"):
        load_spec(path)


def test_missing_spec():
    with pytest.raises(SpecError):
        load_spec("no_such_spec")


def test_sweep_expansion_order():
    spec = parse_spec("[experiment]\noutputs = analytic\n[sweep]\n"
                      "link.snr_db = 0, 10\nscheme.period_s = 0.1, 0.2\n")
    assert spec.point_count() == 4
    points = [(c.overrides["link.snr_db"], c.overrides["scheme.period_s"]) for c in spec.cases()]
    assert points == [(0.0, 0.1), (0.0, 0.2), (10.0, 0.1), (10.0, 0.2)]
    assert [c.index for c in spec.cases()] == [0, 1, 2, 3]


def test_integer_sweep_keys_are_rounded():
    spec = parse_spec("[experiment]\noutputs = analytic\n[sweep]\nfield.sensors = 3, 5\n")
    assert [c.field.count for c in spec.cases()] == [3, 5]
    assert [c.schemes[0].sensors for c in spec.cases()] == [3, 5]


def test_linspace_and_defaults():
    spec = parse_spec("[experiment]\noutputs = regions\n[scheme]\nschemes = asyn-infer\n"
                      "[regions]\nmssc_grid = linspace(0, 1, 5)\n")
    assert spec.values["regions"]["mssc_grid"] == [0.0, 0.25, 0.5, 0.75, 1.0]
    case = next(spec.cases())
    # h defaults to the even spacing T/M when it is feasible
    assert case.schemes[0].shift_s == pytest.approx(0.03)
    assert spec.name == "experiment"


def test_noise_variance_and_link_budget():
    spec = parse_spec("[experiment]\noutputs = analytic\n[source]\nsigma2_v = 0.25\n"
                      "[link]\ndistance_m = 200\n")
    case = next(spec.cases())
    assert case.source.gamma_o == pytest.approx(4.0)
    assert case.link.snr_db == pytest.approx(5.19, abs=0.01)


def test_bundled_specs_all_parse():
    names = {name for name, _ in list_specs()}
    assert names == {p.stem for p in BUNDLED_SPECS.glob("*.ini")}
    assert {"defaults_point", "asyn_shifts", "syn_surface", "asyn_surface", "regions_vs_period",
            "blocklength_sweep", "min_mse_vs_mssc"} <= names
    assert load_spec("defaults_point").name == "defaults_point"


def test_single_point_analytic_run(tmp_path):
    spec = parse_spec(QUICK_SPEC)
    results = run_experiment(spec, tmp_path)
    rows = read_rows(results["files"]["analytic"])
    assert [r["scheme"] for r in rows] == ["no-infer", "syn-infer", "asyn-infer"]
    assert not results["partial"]
    for r in rows:
        assert float(r["mse_lb"]) <= float(r["mse_analytic"]) <= float(r["mse_ub"])
    assert rows[0]["M"] == "1"
    assert rows[0]["h"] == ""


def test_reruns_are_byte_identical(tmp_path):
    spec = parse_spec(QUICK_SPEC)
    manifests = []
    for name in ("a", "b"):
        results = run_experiment(spec, tmp_path / name)
        manifests.append(json.loads(write_manifest(spec, tmp_path / name, results).read_text()))
    assert (tmp_path / "a" / "analytic.csv").read_bytes() == (tmp_path / "b" / "analytic.csv").read_bytes()
    assert manifests[0] == manifests[1]


def test_manifest_hashes(tmp_path):
    spec = parse_spec(QUICK_SPEC)
    results = run_experiment(spec, tmp_path)
    manifest = json.loads(write_manifest(spec, tmp_path, results).read_text())
    assert manifest["outputs"] == {"analytic.csv": sha256_file(tmp_path / "analytic.csv")}
    assert manifest["spec_sha256"] == spec.digest
    assert manifest["partial"] is False
    assert "acceptance" not in manifest


def test_failed_point_marks_partial(tmp_path, monkeypatch):
    spec = parse_spec("[experiment]\noutputs = analytic\n[sweep]\nlink.snr_db = 0, 5, 10\n")
    real = experiment.evaluate_case

    def flaky(spec, case):
        if case.index == 1:
            raise RuntimeError("boom")
        return real(spec, case)

    monkeypatch.setattr(experiment, "evaluate_case", flaky)
    results = run_experiment(spec, tmp_path)
    assert results["partial"]
    assert len(results["errors"]) == 1 and "boom" in results["errors"][0]
    assert len(read_rows(tmp_path / "analytic.csv")) == 2
    manifest = json.loads(write_manifest(spec, tmp_path, results).read_text())
    assert manifest["partial"] is True


def test_mssc_override_rows(tmp_path):
    spec = parse_spec("[experiment]\noutputs = analytic\n[sweep]\n"
                      "analytic.eps_bar = 0.2, 0.6\nfield.mssc = 0.3\n")
    rows = read_rows(run_experiment(spec, tmp_path)["files"]["analytic"])
    assert len(rows) == 2
    expected = mse_approx(SourceParams(), 0.3, LinkParams(), SchemeConfig(scheme=Scheme.SYN_INFER),
                          eps_bar=0.6).value
    assert float(rows[1]["mse_analytic"]) == pytest.approx(expected, rel=1e-11)
    assert rows[1]["mse_lb"] == ""


def test_optimize_and_region_outputs(tmp_path):
    spec = parse_spec("[experiment]\noutputs = optimize, regions\n"
                      "[scheme]\nschemes = syn-infer, asyn-infer\n"
                      "[regions]\nmssc_grid = linspace(0, 1, 11)\n")
    results = run_experiment(spec, tmp_path)
    methods = [(r["scheme"], r["method"]) for r in read_rows(results["files"]["optimize"])]
    assert methods == [("syn-infer", "blocklength"), ("asyn-infer", "time-shift-only"), ("asyn-infer", "joint")]
    trace = read_rows(tmp_path / "optimize_trace.csv")
    assert trace[0]["iter"] == "0"
    regions = read_rows(results["files"]["regions"])
    assert len(regions) == 11
    assert regions[0]["winner"] == "no-infer"
    assert regions[-1]["winner"] == "asyn-infer"


def test_compare_identical_files_pass(tmp_path):
    path = write_rows(tmp_path / "a.csv", ["scheme", "N", "mse_analytic"],
                      [["syn-infer", 80, 0.6], ["asyn-infer", 80, 0.5]])
    report = compare_report(path, path)
    assert report["passed"]
    assert report["failed_rows"] == []
    assert all(t["z_score"] == 0.0 for t in report["tests"])


def test_compare_flags_perturbed_rows(tmp_path):
    analytic = write_rows(tmp_path / "a.csv", ["scheme", "N", "mse_analytic"],
                          [["syn-infer", 80, 0.6], ["asyn-infer", 80, 0.5], ["no-infer", 80, 0.8]])
    simulated = write_rows(tmp_path / "s.csv", ["scheme", "N", "mse_mc", "stderr"],
                           [["syn-infer", 80, 0.66, 0.001], ["asyn-infer", 80, 0.5002, 0.001],
                            ["no-infer", 80, 0.88, 0.001]])
    report = compare_report(analytic, simulated)
    assert not report["passed"]
    assert report["failed_rows"] == [1, 3]
    assert report["tests"][1]["z_score"] == pytest.approx(0.2)
    out = write_comparison(tmp_path / "comparison.csv", report)
    assert [r["passed"] for r in read_rows(out)] == ["false", "true", "false"]


def test_compare_rejects_mismatched_files(tmp_path):
    analytic = write_rows(tmp_path / "a.csv", ["scheme", "N", "mse_analytic"], [["syn-infer", 80, 0.6]])
    other_key = write_rows(tmp_path / "b.csv", ["scheme", "N", "mse_analytic"], [["syn-infer", 90, 0.6]])
    longer = write_rows(tmp_path / "c.csv", ["scheme", "N", "mse_analytic"],
                        [["syn-infer", 80, 0.6], ["syn-infer", 90, 0.6]])
    no_column = write_rows(tmp_path / "d.csv", ["scheme", "N", "value"], [["syn-infer", 80, 0.6]])
    for bad in (other_key, longer, no_column, tmp_path / "missing.csv"):
        with pytest.raises(SpecError):
            compare_report(analytic, bad)


def test_main_exit_codes(tmp_path, capsys):
    assert main(["list-specs"]) == EXIT_OK
    assert "defaults_point" in capsys.readouterr().out

    spec = write_spec(tmp_path, QUICK_SPEC)
    assert main(["run", str(spec), "--out-dir", str(tmp_path / "run"), "--pdf"]) == EXIT_OK
    for name in ("analytic.csv", "summary.txt", "manifest.json", "report.pdf"):
        assert (tmp_path / "run" / name).exists()

    assert main(["run", "no_such_spec"]) == EXIT_CONFIG
    bad = write_spec(tmp_path, "[experiment]\noutputs = analytic\n[link]\nsnr = 5\n", "bad.ini")
    assert main(["run", str(bad)]) == EXIT_CONFIG
    assert "bad.ini:4" in capsys.readouterr().err


def test_main_single_sensor_asyn_is_a_config_error(tmp_path, capsys):
    """One sensor cannot be time-shifted; the default shift must not divide by zero"""
    one = write_spec(tmp_path, "[scheme]\nschemes = asyn-infer\n[field]\nsensors = 1\n", "one.ini")
    assert main(["run", str(one), "--out-dir", str(tmp_path / "out")]) == EXIT_CONFIG
    captured = capsys.readouterr()
    assert "one.ini:4" in captured.err
    assert "Unexpected error" not in captured.out


def test_main_compare_exit_codes(tmp_path):
    analytic = write_rows(tmp_path / "a.csv", ["scheme", "N", "mse_analytic"], [["syn-infer", 80, 0.6]])
    simulated = write_rows(tmp_path / "s.csv", ["scheme", "N", "mse_mc", "stderr"],
                           [["syn-infer", 80, 0.66, 0.01]])
    assert main(["compare", str(analytic), str(analytic)]) == EXIT_OK
    out = tmp_path / "cmp.csv"
    assert main(["compare", str(analytic), str(simulated), "--out", str(out), "--pdf"]) == EXIT_ACCEPTANCE
    assert out.exists()
    assert out.with_suffix(".pdf").exists()


def test_defaults_point_passes_acceptance(tmp_path):
    out = tmp_path / "defaults"
    assert main(["run", "defaults_point", "--out-dir", str(out)]) == EXIT_OK
    rows = read_rows(out / "comparison.csv")
    assert len(rows) == 3
    assert all(r["passed"] == "true" for r in rows)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["acceptance"] == {"passed": True, "checks": 3}
    assert set(manifest["outputs"]) == {"analytic.csv", "simulate.csv", "comparison.csv", "summary.txt"}
