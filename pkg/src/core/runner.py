#!/usr/bin/env python3
"""
Experiment Runner
Command-line entry point: run bundled or custom experiment specs, compare
analytic and simulated CSVs, list the bundled specs
"""

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

from src.core.acceptance import compare_report, generate_summary, write_comparison
from src.core.experiment import list_specs, load_spec, run_experiment, write_manifest
from src.reconstruction.errors import InvalidConfigError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ACCEPTANCE = 2


def parse_arguments(argv=None):
    """Parse command-line arguments"""
    parser = argparse.ArgumentParser(
        description='Inference-aware state reconstruction: experiment runner',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Evaluate the default operating point (analytic + Monte Carlo + acceptance)
  python reconstruct.py run defaults_point

  # Run a custom spec with a different seed and 4 worker threads
  python reconstruct.py run my_experiment.ini --seed 7 --threads 4 --out-dir results/mine

  # Compare an analytic CSV against a simulation CSV
  python reconstruct.py compare results/a/analytic.csv results/a/simulate.csv

  # Show the bundled specs
  python reconstruct.py list-specs
        """
    )
    parser.add_argument(
        '-v', '--verbose',
        action='store_true',
        help='Enable debug logging'
    )
    commands = parser.add_subparsers(dest='command', required=True)

    run = commands.add_parser('run', help='Run an experiment spec (file path or bundled name)')
    run.add_argument('spec', type=str, help='Spec file, or the name of a bundled spec')
    run.add_argument('--seed', type=int, help='Override the spec seed')
    run.add_argument('--out-dir', type=str, help='Output directory (default: results/<spec name>)')
    run.add_argument('--replicas', type=int, help='Override the Monte Carlo replica count')
    run.add_argument('--threads', type=int, help='Worker threads for sweep points')
    run.add_argument('--pdf', action='store_true', help='Also write report.pdf')

    compare = commands.add_parser('compare', help='Compare an analytic CSV against a simulation CSV')
    compare.add_argument('analytic', type=str, help='CSV with an mse_analytic column')
    compare.add_argument('simulation', type=str, help='CSV with mse_mc and stderr columns')
    compare.add_argument('--rel-tol', type=float, default=0.01, help='Relative error bound (default: 0.01)')
    compare.add_argument('--z-max', type=float, default=4.0, help='Largest allowed |z| (default: 4)')
    compare.add_argument('--out', type=str, help='Write the per-row comparison CSV here')
    compare.add_argument('--pdf', action='store_true',
                         help='Also write a PDF next to --out (default: comparison.pdf)')

    commands.add_parser('list-specs', help='List the bundled experiment specs')
    return parser.parse_args(argv)


def run_command(args):
    """Run one spec end to end and return the exit code"""
    spec = load_spec(args.spec)
    spec = spec.with_overrides(seed=args.seed, replicas=args.replicas, threads=args.threads)
    out_dir = Path(args.out_dir) if args.out_dir else Path("results") / spec.name

    print(f"Mode: Run")
    print(f"  Spec: {spec.path}")
    print(f"  Outputs: {', '.join(spec.outputs)}")
    print(f"  Sweep points: {spec.point_count()}")
    print(f"  Seed: {spec.seed}  Replicas: {spec.replicas}  Threads: {spec.threads}")
    print(f"  Output: {out_dir.resolve()}")
    print()

    print("[1/4] Evaluating sweep...")
    results = run_experiment(spec, out_dir)
    for name, rows in results["rows"].items():
        print(f"  ✓ {name}: {len(rows)} rows")
    for error in results["errors"]:
        print(f"  ❌ {error}")

    report = None
    print("[2/4] Acceptance...")
    if "simulate" in results["files"]:
        acceptance = spec.values["acceptance"]
        reference = results["files"].get("analytic", results["files"]["simulate"])
        report = compare_report(reference, results["files"]["simulate"],
                                rel_bound=acceptance["rel_tol"], z_max=acceptance["z_max"])
        path = write_comparison(out_dir / "comparison.csv", report)
        results["files"]["comparison"] = str(path)
        results["rows"]["comparison"] = report["tests"]
        mark = "✓" if report["passed"] else "❌"
        print(f"  {mark} max |z| {report['max_abs_z']:.2f}, max relative error {report['max_rel_error']:.3%}")
    else:
        print("  ⚠️  No simulate output; nothing to compare")

    print("[3/4] Summary...")
    summary = generate_summary(out_dir / "summary.txt", f"Experiment: {spec.name}", results, report)
    results["files"]["summary"] = str(summary)

    print("[4/4] Manifest...")
    manifest_path = write_manifest(spec, out_dir, results, checks=report["tests"] if report else None)
    print(f"  ✓ {manifest_path}")

    if args.pdf:
        from src.core.report_generator import generate_pdf_report

        with open(manifest_path) as f:
            results["manifest"] = json.load(f)
        results["acceptance"] = report
        pdf = generate_pdf_report(results, out_dir / "report.pdf")
        print(f"  ✓ {pdf}")

    if results["partial"]:
        print("\n❌ Run incomplete - partial outputs flagged in the manifest")
        return EXIT_CONFIG
    if report is not None and not report["passed"]:
        print(f"\n❌ Acceptance failed on rows {report['failed_rows']}")
        return EXIT_ACCEPTANCE
    print("\n" + "=" * 60)
    print("RUN COMPLETE!")
    print("=" * 60)
    return EXIT_OK


def compare_command(args):
    report = compare_report(args.analytic, args.simulation, rel_bound=args.rel_tol, z_max=args.z_max)
    if args.out:
        write_comparison(args.out, report)
    for t in report["tests"]:
        mark = "✓" if t["passed"] else "❌"
        z = "n/a" if t["z_score"] is None else f"{t['z_score']:+.2f}"
        print(f"  {mark} {t['name']}: z {z}, relative error {t['rel_error']:.3%}")
    if args.pdf:
        from src.core.report_generator import generate_pdf_report

        pdf_path = Path(args.out).with_suffix(".pdf") if args.out else Path("comparison.pdf")
        results = {"name": f"{Path(args.analytic).name} vs {Path(args.simulation).name}",
                   "points": len(report["tests"]), "files": {}, "rows": {}, "acceptance": report}
        print(f"  ✓ {generate_pdf_report(results, pdf_path)}")
    if report["passed"]:
        print(f"\nAll {len(report['tests'])} rows pass")
        return EXIT_OK
    print(f"\n❌ Failed rows: {report['failed_rows']}")
    return EXIT_ACCEPTANCE


def list_command(args):
    for name, description in list_specs():
        print(f"{name:24s} {description}")
    return EXIT_OK


def main(argv=None):
    """Main entry point; returns the process exit code"""
    args = parse_arguments(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )

    if args.command != 'list-specs':
        print("""
╔══════════════════════════════════════════════════════════╗
║  Inference-Aware State Reconstruction                    ║
║  Short-Packet Sensor Networks - Experiment Runner        ║
╚══════════════════════════════════════════════════════════╝
    """)

    handlers = {'run': run_command, 'compare': compare_command, 'list-specs': list_command}
    try:
        return handlers[args.command](args)
    except InvalidConfigError as e:
        print(f"\n❌ Config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        print(f"\n❌ Unexpected error: {e}")
        traceback.print_exc()
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
