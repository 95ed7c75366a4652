"""
Acceptance Checks
Compares analytic and Monte Carlo CSVs row by row with z-score and relative-error gates
"""

import csv
import logging
import math
from pathlib import Path

from src.reconstruction.errors import SpecError

logger = logging.getLogger(__name__)

KEY_COLUMNS = ("scheme", "T_s", "L", "N", "T", "h", "M")
COMPARISON_COLUMNS = ["row", "scheme", "N", "T", "h", "M", "mse_analytic", "mse_mc", "stderr",
                      "z_score", "rel_error", "passed"]


def _read_rows(path):
    path = Path(path)
    if not path.exists():
        raise SpecError(f"no such file: {path}")
    with open(path, "r", newline="") as f:
        reader = csv.DictReader(f)
        rows = list(reader)
        columns = reader.fieldnames or []
    if "mse_analytic" not in columns:
        raise SpecError("missing column 'mse_analytic'", str(path), 1)
    return rows, columns


def _number(text):
    return float(text) if text not in (None, "") else None


def _check_row(index, analytic, simulated, value_column, rel_bound, z_max):
    expected = float(analytic["mse_analytic"])
    actual = float(simulated[value_column])
    stderr = _number(simulated.get("stderr"))
    diff = actual - expected
    rel_error = abs(diff) / abs(expected) if expected != 0 else (0.0 if diff == 0 else math.inf)
    if stderr is not None and stderr > 0:
        z = diff / stderr
    elif diff == 0:
        z = 0.0
    else:
        z = None

    passed = rel_error <= rel_bound and (z is None or abs(z) <= z_max)
    return {
        "name": f"row {index}: {analytic.get('scheme', '?')} N={analytic.get('N', '?')} h={analytic.get('h') or '-'}",
        "row": index,
        "passed": passed,
        "expected": expected,
        "actual": actual,
        "stderr": stderr,
        "z_score": z,
        "rel_error": rel_error,
        "key": {k: analytic.get(k) for k in ("scheme", "N", "T", "h", "M")},
    }


def compare_report(analytic_csv, simulation_csv, rel_bound=0.01, z_max=4.0):
    """
    Row-by-row comparison of an analytic CSV against a simulation CSV.

    The simulated value is `mse_mc` when the second file has it and
    `mse_analytic` otherwise, so two analytic files can be compared directly.
    A row fails when its relative error exceeds `rel_bound` or |z| exceeds
    `z_max`; rows without a standard error are judged on relative error only.

    Returns:
        dict: {"tests": per-row check dicts, "passed": bool, "failed_rows": [row indices],
            "max_abs_z": float, "max_rel_error": float}
    """
    analytic_rows, _ = _read_rows(analytic_csv)
    simulated_rows, columns = _read_rows(simulation_csv)
    if len(analytic_rows) != len(simulated_rows):
        raise SpecError(
            f"row count mismatch: {len(analytic_rows)} analytic vs {len(simulated_rows)} simulated",
            str(simulation_csv),
        )
    value_column = "mse_mc" if "mse_mc" in columns else "mse_analytic"

    tests = []
    for index, (a, s) in enumerate(zip(analytic_rows, simulated_rows), start=1):
        for key in KEY_COLUMNS:
            if key in a and key in s and a[key] != s[key]:
                # +1 for the header line
                raise SpecError(f"row {index} differs in '{key}': {a[key]} vs {s[key]}",
                                str(simulation_csv), index + 1)
        tests.append(_check_row(index, a, s, value_column, rel_bound, z_max))

    failed = [t["row"] for t in tests if not t["passed"]]
    zs = [abs(t["z_score"]) for t in tests if t["z_score"] is not None]
    report = {
        "tests": tests,
        "passed": not failed,
        "failed_rows": failed,
        "max_abs_z": max(zs) if zs else 0.0,
        "max_rel_error": max((t["rel_error"] for t in tests), default=0.0),
        "rel_bound": rel_bound,
        "z_max": z_max,
    }
    if failed:
        logger.warning("%d of %d rows failed: %s", len(failed), len(tests), failed)
    return report


def write_comparison(path, report):
    """Write the per-row comparison with its z-score and relative-error columns"""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(COMPARISON_COLUMNS)
        for t in report["tests"]:
            key = t["key"]
            writer.writerow([
                t["row"], key["scheme"], key["N"], key["T"], key["h"], key["M"],
                f"{t['expected']:.12g}", f"{t['actual']:.12g}",
                "" if t["stderr"] is None else f"{t['stderr']:.12g}",
                "" if t["z_score"] is None else f"{t['z_score']:.12g}",
                f"{t['rel_error']:.12g}",
                "true" if t["passed"] else "false",
            ])
    return path


def generate_summary(path, title, results, report=None):
    """Write a plain-text run summary and echo it to stdout"""
    lines = [title, "=" * 60, ""]
    lines.append(f"Sweep points: {results.get('points', 0)}")
    for name, rows in results.get("rows", {}).items():
        lines.append(f"  {name:10s} {len(rows):6d} rows")
    if results.get("partial"):
        lines.append("")
        lines.append("PARTIAL RUN")
        lines.extend(f"  {e}" for e in results["errors"])

    if report is not None:
        lines.append("")
        lines.append("=" * 60)
        passed = sum(1 for t in report["tests"] if t["passed"])
        lines.append(f"Acceptance: {passed}/{len(report['tests'])} rows within "
                     f"{report['rel_bound']:.2%} and |z| <= {report['z_max']:g}")
        lines.append(f"Max |z|: {report['max_abs_z']:.3f}")
        lines.append(f"Max relative error: {report['max_rel_error']:.4%}")
        for t in report["tests"]:
            if not t["passed"]:
                z = "n/a" if t["z_score"] is None else f"{t['z_score']:+.2f}"
                lines.append(f"  FAIL {t['name']}: analytic {t['expected']:.6g}, "
                             f"simulated {t['actual']:.6g}, z {z}, rel {t['rel_error']:.3%}")

    text = "\n".join(lines) + "\n"
    with open(path, "w") as f:
        f.write(text)
    print(text)
    return path
