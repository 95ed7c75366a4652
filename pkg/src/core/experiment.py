"""
Experiment Specs and Sweep Execution
Parses INI experiment specs, expands sweeps and writes CSV/JSON artifacts
"""

import configparser
import csv
import hashlib
import itertools
import json
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy

from src.reconstruction import __version__
from src.reconstruction.analytic import (
    BoundAxis,
    Scheme,
    SchemeConfig,
    bounds,
    mse,
    mse_approx,
    mssc_of,
    resolve_eps,
)
from src.reconstruction.errors import InvalidConfigError, SpecError
from src.reconstruction.field import SourceParams, equidistant_field, place_sensors
from src.reconstruction.optimize import (
    OptimizerConfig,
    exhaustive_search,
    fixed_blocklength_no_infer,
    joint_optimize,
    optimize_blocklength_syn,
    time_shift_only,
)
from src.reconstruction.regions import classify, exhaustive_region_oracle, thresholds_for
from src.reconstruction.simulate import SuccessModel, simulate_replicas
from src.reconstruction.spt import LinkParams, db_to_linear, snr_from_link_budget

logger = logging.getLogger(__name__)

PROJECT_ROOT = Path(__file__).resolve().parents[2]
BUNDLED_SPECS = PROJECT_ROOT / "specs"

OUTPUTS = ("analytic", "simulate", "optimize", "regions")

ANALYTIC_COLUMNS = ["scheme", "T_s", "L", "N", "T", "h", "M", "mssc", "eps_bar",
                    "mse_analytic", "mse_lb", "mse_ub"]
SIMULATE_COLUMNS = ["scheme", "T_s", "L", "N", "T", "h", "M", "mssc", "eps_bar",
                    "mse_mc", "stderr", "mse_analytic", "z_score", "rel_error"]
OPTIMIZE_COLUMNS = ["scheme", "method", "T", "M", "mssc", "gamma_r_bar_dB", "N_star", "h_star",
                    "mse_star", "mse_average_blep", "iterations", "converged", "evaluations"]
TRACE_COLUMNS = ["point", "iter", "h_s", "N", "mse", "residual_h", "residual_N"]
REGION_COLUMNS = ["T", "gamma_r_bar_dB", "mssc", "thr1", "thr2", "winner", "oracle_winner"]


def _floats(text):
    """Comma list of floats, or linspace(start, stop, count)"""
    text = text.strip()
    match = re.fullmatch(r"linspace\(\s*([^,]+),\s*([^,]+),\s*(\d+)\s*\)", text)
    if match:
        return [float(v) for v in np.linspace(float(match[1]), float(match[2]), int(match[3]))]
    return [float(v) for v in text.split(",") if v.strip()]


def _words(text):
    return [w.strip() for w in text.split(",") if w.strip()]


def _optional_float(text):
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


def _optional_int(text):
    return None if text.strip().lower() in ("", "auto", "none") else int(text)


# section -> key -> (parser, default)
SCHEMA = {
    "experiment": {
        "name": (str, None),
        "description": (str, ""),
        "outputs": (_words, ["analytic"]),
        "seed": (int, 0),
        "replicas": (int, 1),
        "threads": (int, 1),
    },
    "source": {
        "sigma2_x": (float, 1.0),
        "gamma_o": (float, 5.0),
        "sigma2_v": (_optional_float, None),
        "a_per_s": (float, 2.0),
        "b_per_m": (float, 0.01),
    },
    "link": {
        "info_bits": (float, 160.0),
        "blocklength": (float, 80.0),
        "symbol_s": (float, 1e-4),
        "snr_db": (_optional_float, 5.0),
        "distance_m": (_optional_float, None),
        "tx_power_mw": (float, 0.2),
    },
    "scheme": {
        "schemes": (_words, ["syn-infer"]),
        "period_s": (float, 0.15),
        "shift_s": (_optional_float, None),
        "target": (int, 1),
    },
    "field": {
        "sensors": (int, 5),
        "layout": (str, "random"),
        "half_width_m": (float, 10.0),
        "radius_m": (float, 50.0),
        "seed": (int, 42),
    },
    "analytic": {
        "bound_axis": (str, "blep"),
        "blep": (str, "average"),
    },
    "simulate": {
        "periods": (int, 100000),
        "success_model": (str, "segmented"),
    },
    "optimizer": {
        "n_min": (int, 10),
        "n_max": (_optional_int, None),
        "max_iterations": (int, 3),
        "tol_shift_s": (float, 1e-4),
        "tol_blocklength": (float, 1.0),
        "root_tol": (float, 1e-9),
        "n_init": (int, 80),
        "root_method": (str, "brentq"),
        "exhaustive": (lambda t: t.strip().lower() in ("1", "true", "yes", "on"), False),
    },
    "regions": {
        "mssc_grid": (_floats, [float(v) for v in np.linspace(0.0, 1.0, 21)]),
    },
    "acceptance": {
        "rel_tol": (float, 0.01),
        "z_max": (float, 4.0),
    },
}

# Sweep axes that do not map to a spec key
VIRTUAL_AXES = {"analytic.eps_bar", "field.mssc"}


@dataclass
class Case:
    """One sweep point, fully resolved"""
    index: int
    overrides: Dict[str, float]
    source: SourceParams
    link: LinkParams
    field: object
    schemes: List[SchemeConfig]
    values: Dict[str, Dict[str, object]]
    eps_bar: Optional[float] = None
    mssc: Optional[float] = None

    def optimizer_config(self):
        return optimizer_config(self.values)


@dataclass
class ExperimentSpec:
    """
    A parsed experiment spec.

    Attributes:
        name: Experiment name (file stem when not given)
        path: Spec file path
        values: section -> key -> parsed value
        sweep: (axis, values) pairs in file order; their product is the sweep
        outputs: Requested outputs
        seed: Root seed
        replicas: Monte Carlo replicas per point
        threads: Worker threads for sweep points
    """
    name: str
    path: Optional[str]
    text: str
    values: Dict[str, Dict[str, object]]
    sweep: List[Tuple[str, List[float]]] = dc_field(default_factory=list)
    lines: Dict[Tuple[str, Optional[str]], int] = dc_field(default_factory=dict)

    @property
    def outputs(self):
        return self.values["experiment"]["outputs"]

    @property
    def seed(self):
        return self.values["experiment"]["seed"]

    @property
    def replicas(self):
        return self.values["experiment"]["replicas"]

    @property
    def threads(self):
        return self.values["experiment"]["threads"]

    @property
    def digest(self):
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    def line_of(self, section, key=None):
        return self.lines.get((section, key), self.lines.get((section, None)))

    def point_count(self):
        return math.prod(len(values) for _, values in self.sweep) if self.sweep else 1

    def with_overrides(self, **experiment):
        """Copy with [experiment] values replaced (seed, replicas, threads)"""
        values = {s: dict(v) for s, v in self.values.items()}
        values["experiment"].update({k: v for k, v in experiment.items() if v is not None})
        return ExperimentSpec(self.name, self.path, self.text, values, list(self.sweep), dict(self.lines))

    def cases(self):
        """Yield every sweep point in deterministic order"""
        axes = [axis for axis, _ in self.sweep]
        grids = [values for _, values in self.sweep]
        for index, combo in enumerate(itertools.product(*grids) if grids else [()]):
            yield self.build_case(index, dict(zip(axes, combo)))

    def build_case(self, index, overrides):
        values = {s: dict(v) for s, v in self.values.items()}
        for axis, value in overrides.items():
            if axis in VIRTUAL_AXES:
                continue
            section, key = axis.split(".")
            default = SCHEMA[section][key][1]
            if isinstance(default, int) and not isinstance(default, bool):
                value = int(round(value))
            values[section][key] = value

        section, key = "source", None
        try:
            src = values["source"]
            if src["sigma2_v"] is not None:
                source = SourceParams.from_noise_variance(src["sigma2_x"], src["sigma2_v"],
                                                          src["a_per_s"], src["b_per_m"])
            else:
                source = SourceParams(src["sigma2_x"], src["gamma_o"], src["a_per_s"], src["b_per_m"])

            section = "link"
            lk = values["link"]
            if lk["distance_m"] is not None:
                snr = snr_from_link_budget(lk["distance_m"], lk["tx_power_mw"], 1.0 / lk["symbol_s"])
            else:
                snr = db_to_linear(lk["snr_db"])
            link = LinkParams(lk["info_bits"], lk["blocklength"], lk["symbol_s"], snr)

            section = "field"
            fd = values["field"]
            target = values["scheme"]["target"]
            if fd["layout"] == "random":
                field = place_sensors(int(fd["sensors"]), fd["half_width_m"], seed=int(fd["seed"]), target=target)
            elif fd["layout"] == "equidistant":
                field = equidistant_field(int(fd["sensors"]), fd["radius_m"], target=target)
            else:
                raise InvalidConfigError(f"unknown layout '{fd['layout']}'")
            if Scheme.ASYN_INFER.value in values["scheme"]["schemes"] and field.count < 2:
                key = "sensors"
                raise InvalidConfigError(f"asyn-infer needs at least two sensors, got {field.count}")

            section = "scheme"
            schemes = [self._scheme(values, name, link, field.count) for name in values["scheme"]["schemes"]]
            section = "optimizer"
            if "optimize" in self.outputs:
                optimizer_config(values)
        except InvalidConfigError as e:
            axis = next((a for a in overrides if a.startswith(section + ".")), None)
            line = self.line_of("sweep", axis) if axis else self.line_of(section, key)
            raise SpecError(f"point {index}: {e}", self.path, line) from e

        return Case(index=index, overrides=overrides, source=source, link=link, field=field,
                    schemes=schemes, values=values, eps_bar=overrides.get("analytic.eps_bar"),
                    mssc=overrides.get("field.mssc"))

    @staticmethod
    def _scheme(values, name, link, sensors):
        sc = values["scheme"]
        period = sc["period_s"]
        shift = None
        if Scheme(name) is Scheme.ASYN_INFER:
            shift = sc["shift_s"]
            if shift is None:
                shift = min(period / sensors, (period - link.delay_s) / (sensors - 1))
        config = SchemeConfig(scheme=name, period_s=period, shift_s=shift, sensors=sensors, target=sc["target"])
        config.validate(link)
        return config


def optimizer_config(values):
    opt = dict(values["optimizer"])
    opt.pop("exhaustive")
    return OptimizerConfig(**opt)


def _line_index(text):
    """Map (section, key) to 1-based line numbers"""
    lines = {}
    section = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            lines[(section, None)] = number
        elif section is not None:
            key = re.split(r"[=:]", line, maxsplit=1)[0].strip()
            lines[(section, key)] = number
    return lines


def parse_spec(text, path=None):
    """
    Parse an experiment spec from INI text.

    Raises:
        SpecError: with the line of the offending section or key
    """
    lines = _line_index(text)
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path or "<spec>"))
    except configparser.Error as e:
        raise SpecError(str(e).splitlines()[0], path, getattr(e, "lineno", None)) from e

    values = {}
    for section, keys in SCHEMA.items():
        values[section] = {key: default for key, (_, default) in keys.items()}
    sweep = []
    for section in parser.sections():
        if section == "sweep":
            for axis, raw in parser.items("sweep"):
                line = lines.get(("sweep", axis))
                known = axis in VIRTUAL_AXES or (
                    "." in axis and axis.split(".", 1)[0] in SCHEMA
                    and axis.split(".", 1)[1] in SCHEMA[axis.split(".", 1)[0]]
                    and axis.split(".", 1)[0] != "experiment"
                )
                if not known:
                    raise SpecError(f"sweep axis '{axis}' does not name a parameter", path, line)
                try:
                    grid = _floats(raw)
                except ValueError as e:
                    raise SpecError(f"sweep axis '{axis}': {e}", path, line) from e
                if not grid:
                    raise SpecError(f"sweep axis '{axis}' has no values", path, line)
                sweep.append((axis, grid))
            continue
        if section not in SCHEMA:
            raise SpecError(f"unknown section [{section}]", path, lines.get((section, None)))
        for key, raw in parser.items(section):
            line = lines.get((section, key))
            if key not in SCHEMA[section]:
                raise SpecError(f"unknown key '{key}' in [{section}]", path, line)
            convert = SCHEMA[section][key][0]
            try:
                values[section][key] = convert(raw)
            except ValueError as e:
                raise SpecError(f"bad value for '{key}': {e}", path, line) from e

    experiment = values["experiment"]
    if experiment["name"] is None:
        experiment["name"] = Path(path).stem if path else "experiment"
    outputs = experiment["outputs"]
    line = lines.get(("experiment", "outputs"))
    if not outputs:
        raise SpecError("at least one output must be requested", path, line)
    for output in outputs:
        if output not in OUTPUTS:
            raise SpecError(f"unknown output '{output}' (choose from {', '.join(OUTPUTS)})", path, line)
    for name in values["scheme"]["schemes"]:
        try:
            Scheme(name)
        except ValueError:
            raise SpecError(f"unknown scheme '{name}'", path, lines.get(("scheme", "schemes"))) from None
    if "simulate" in outputs and any(axis in VIRTUAL_AXES for axis, _ in sweep):
        raise SpecError("simulate cannot sweep eps_bar or mssc overrides", path, lines.get(("sweep", None)))
    try:
        SuccessModel(values["simulate"]["success_model"])
        BoundAxis(values["analytic"]["bound_axis"])
    except ValueError as e:
        raise SpecError(str(e), path, lines.get(("simulate", None))) from e

    if "regions" in outputs and Scheme.ASYN_INFER.value not in values["scheme"]["schemes"]:
        raise SpecError("regions output needs asyn-infer in schemes", path, lines.get(("scheme", "schemes")))

    spec = ExperimentSpec(experiment["name"], str(path) if path else None, text, values, sweep, lines)
    # Resolve every point now so a bad combination fails before any work starts
    list(spec.cases())
    return spec


def load_spec(path):
    """Load a spec file, or a bundled spec by name"""
    candidate = Path(path)
    if not candidate.exists() and (BUNDLED_SPECS / f"{path}.ini").exists():
        candidate = BUNDLED_SPECS / f"{path}.ini"
    if not candidate.exists():
        raise SpecError(f"spec not found: {path}")
    return parse_spec(candidate.read_text(), candidate)


def list_specs():
    """(name, description) of every bundled spec"""
    specs = []
    for path in sorted(BUNDLED_SPECS.glob("*.ini")):
        spec = parse_spec(path.read_text(), path)
        specs.append((spec.name, spec.values["experiment"]["description"]))
    return specs


def _point_seed(seed, index):
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _shared_columns(case, scheme, eps):
    link = case.link
    mssc = case.mssc if case.mssc is not None else mssc_of(case.source, case.field)
    return [scheme.scheme.value, link.symbol_s, link.info_bits, link.blocklength, scheme.period_s,
            scheme.shift_s, scheme.effective_sensors, mssc, eps]


def evaluate_case(spec, case):
    """
    Evaluate every requested output at one sweep point.

    Returns:
        dict: output name -> list of rows (lists in column order)
    """
    rows = {name: [] for name in ("analytic", "simulate", "optimize", "trace", "regions")}
    analytic = case.values["analytic"]
    outputs = spec.outputs
    source, link, field = case.source, case.link, case.field

    for scheme in case.schemes:
        eps = resolve_eps(link, case.eps_bar, analytic["blep"])
        if "analytic" in outputs:
            if case.mssc is not None:
                value = mse_approx(source, case.mssc, link, scheme, eps_bar=eps).value
                lower = upper = None
            else:
                value = mse(source, field, link, scheme, eps_bar=eps).value
                if case.eps_bar is None:
                    low, up = bounds(source, field, link, scheme, analytic["bound_axis"])
                    lower, upper = low.value, up.value
                else:
                    lower = upper = None
            rows["analytic"].append(_shared_columns(case, scheme, eps) + [value, lower, upper])

        if "simulate" in outputs:
            sim = case.values["simulate"]
            report = simulate_replicas(source, field, link, scheme, sim["periods"],
                                       _point_seed(spec.seed, case.index), replicas=spec.replicas,
                                       success_model=sim["success_model"])
            expected = mse(source, field, link, scheme).value
            report.aux["mse_analytic"] = expected
            rel = abs(report.avg_mse - expected) / expected
            rows["simulate"].append(_shared_columns(case, scheme, eps) +
                                    [report.avg_mse, report.stderr, expected, report.z_score, rel])

        if "optimize" in outputs:
            _optimize_rows(spec, case, scheme, rows)

    if "regions" in outputs:
        _region_rows(spec, case, rows)
    return rows


def _optimize_rows(spec, case, scheme, rows):
    cfg = case.optimizer_config()
    source, link, field = case.source, case.link, case.field
    mssc = mssc_of(source, field)
    prefix = [scheme.scheme.value]
    results = []
    if scheme.scheme is Scheme.NO_INFER:
        results.append(("fixed", fixed_blocklength_no_infer(source, link, scheme, cfg)))
        results.append(("blocklength", optimize_blocklength_syn(source, field, link, scheme, cfg)))
    elif scheme.scheme is Scheme.SYN_INFER:
        results.append(("blocklength", optimize_blocklength_syn(source, field, link, scheme, cfg)))
    else:
        results.append(("time-shift-only", time_shift_only(source, field, link, scheme, cfg)))
        joint = joint_optimize(source, field, link, scheme, cfg)
        results.append(("joint", joint))
        for t in joint.trace:
            rows["trace"].append([case.index, t.iteration, t.shift_s, t.blocklength, t.mse,
                                  t.residual_shift, t.residual_blocklength])
        if case.values["optimizer"]["exhaustive"]:
            results.append(("exhaustive", exhaustive_search(source, field, link, scheme, cfg)))
    for method, result in results:
        rows["optimize"].append(prefix + [
            method, scheme.period_s, scheme.effective_sensors, mssc, link.snr_db,
            result.blocklength, result.shift_s, result.mse.value,
            result.mse.components["mse_average_blep"], result.iterations, result.converged,
            result.evaluations,
        ])


def _region_rows(spec, case, rows):
    source, link, field = case.source, case.link, case.field
    asyn = next(s for s in case.schemes if s.scheme is Scheme.ASYN_INFER)
    grid = case.values["regions"]["mssc_grid"]
    thresholds = thresholds_for(source, field, link, asyn, eps_bar=case.eps_bar)
    oracle = exhaustive_region_oracle(source, field, link, asyn, grid, eps_bar=thresholds.eps_bar)
    for mssc, oracle_winner in oracle:
        report = classify(mssc, thresholds)
        rows["regions"].append([asyn.period_s, link.snr_db, mssc, thresholds.thr1, thresholds.thr2,
                                report.winner.value, oracle_winner.value])


def _format(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12g}"
    return str(value)


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format(v) for v in row])


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_experiment(spec, out_dir):
    """
    Evaluate every sweep point and write one CSV per requested output.

    Points run in a thread pool when spec.threads > 1; rows are written in
    sweep order either way.

    Returns:
        dict: results with "files" (output name -> path), "rows" and "errors";
            "partial" is set when a point failed
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cases = list(spec.cases())
    results = {"name": spec.name, "points": len(cases), "files": {}, "rows": {}, "errors": [],
               "partial": False}

    def run_one(case):
        try:
            return evaluate_case(spec, case), None
        except Exception as e:
            logger.exception("point %d failed", case.index)
            return {}, f"point {case.index} ({case.overrides}): {type(e).__name__}: {e}"

    if spec.threads > 1 and len(cases) > 1:
        with ThreadPoolExecutor(max_workers=spec.threads) as pool:
            per_case = list(pool.map(run_one, cases))
    else:
        per_case = [run_one(case) for case in cases]

    merged = {name: [] for name in ("analytic", "simulate", "optimize", "trace", "regions")}
    for rows, error in per_case:
        if error is not None:
            results["errors"].append(error)
            results["partial"] = True
        for name, part in rows.items():
            merged[name].extend(part)

    layout = {
        "analytic": ("analytic.csv", ANALYTIC_COLUMNS),
        "simulate": ("simulate.csv", SIMULATE_COLUMNS),
        "optimize": ("optimize.csv", OPTIMIZE_COLUMNS),
        "trace": ("optimize_trace.csv", TRACE_COLUMNS),
        "regions": ("regions.csv", REGION_COLUMNS),
    }
    for name, (filename, columns) in layout.items():
        wanted = name in spec.outputs or (name == "trace" and merged["trace"])
        if not wanted:
            continue
        path = out / filename
        write_csv(path, columns, merged[name])
        results["files"][name] = str(path)
        results["rows"][name] = merged[name]
    return results


def write_manifest(spec, out_dir, results, checks=None):
    """Write manifest.json listing every output with its sha256"""
    out = Path(out_dir)
    outputs = {Path(p).name: sha256_file(p) for p in sorted(results["files"].values())}
    manifest = {
        "name": spec.name,
        "spec_path": spec.path,
        "spec_sha256": spec.digest,
        "seed": spec.seed,
        "replicas": spec.replicas,
        "library_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "units": {"time": "s", "distance": "m", "snr": "linear internally, dB in specs and CSV gamma_r_bar_dB"},
        "outputs": outputs,
        "partial": results["partial"],
        "errors": results["errors"],
    }
    if checks is not None:
        manifest["acceptance"] = {"passed": all(c["passed"] for c in checks), "checks": len(checks)}
    path = out / "manifest.json"
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path
