"""Command-line entry point: ``shapeservo {run,repeat,sweep,oracle,verify}``."""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import harness
from .errors import ShapeServoError
from .learner import save_bank
from .report import emit_outputs, write_json, write_lyapunov_csv
from .scenario import ScenarioConfig

log = logging.getLogger("shapeservo")


def _load(path, seed: int | None) -> ScenarioConfig:
    cfg = ScenarioConfig.load(path)
    if seed is not None:
        cfg = ScenarioConfig.from_dict({**cfg.to_dict(), "seed": seed})
    return cfg


def _out_dir(args, cfg: ScenarioConfig) -> Path:
    return Path(args.out) if args.out else Path("out") / cfg.name


def cmd_run(args) -> int:
    cfg = _load(args.scenario, args.seed)
    result = harness.run_scenario(cfg)
    paths = emit_outputs(result, _out_dir(args, cfg), plots=not args.no_plots)
    conv = result.summary["convergence"]
    print(f"{cfg.name}: converged_at={conv['time_to_threshold']} final_norm_e={conv['final_norms'].get('norm_e')}"
          f" aborted={result.summary['aborted']}")
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return 0 if result.summary["aborted"] is None else 2


def cmd_repeat(args) -> int:
    cfg = _load(args.scenario, args.seed)
    out = _out_dir(args, cfg)
    rep = harness.run_repeat(cfg, args.times, workdir=out / "banks")
    for i, res in enumerate(rep.runs, start=1):
        emit_outputs(res, out, stem=f"run{i}", plots=not args.no_plots)
    write_json(rep.summary, out / "repeat_summary.json")
    print(f"{cfg.name}: convergence_times={rep.summary['convergence_times']} "
          f"warm_start_speedup={rep.summary['warm_start_speedup']}")
    return 0


def _sweep_one(job: tuple[str, str, bool, int | None]) -> tuple[str, str]:
    path, out, plots, seed = job
    try:
        cfg = _load(path, seed)
        result = harness.run_scenario(cfg)
        emit_outputs(result, Path(out) / cfg.name, plots=plots)
        return path, f"converged_at={result.converged_time}"
    except ShapeServoError as exc:
        return path, f"error: {exc}"


def cmd_sweep(args) -> int:
    files = sorted(Path(args.directory).glob("*.json"))
    if not files:
        print(f"no scenario files in {args.directory}", file=sys.stderr)
        return 1
    out = args.out or "out"
    jobs = [(str(f), out, not args.no_plots, args.seed) for f in files]
    with ProcessPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(_sweep_one, jobs))
    for path, status in results:
        print(f"{path}: {status}")
    return 1 if any(s.startswith("error") for _, s in results) else 0


def cmd_oracle(args) -> int:
    cfg = _load(args.scenario, args.seed)
    result = harness.run_scenario(cfg)
    oracle = harness.fit_oracle_for_run(cfg, result)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "oracle_bank.json"
    save_bank(oracle.bank(result.bank), path, oracle=True,
              extra={"fit_residual": oracle.fit_residual, "condition": oracle.condition, "scenario": cfg.name})
    print(f"{cfg.name}: fit_residual={oracle.fit_residual:.6g} condition={oracle.condition:.3g} -> {path}")
    return 0


def cmd_verify(args) -> int:
    cfg = _load(args.scenario, args.seed)
    rep = harness.verify(cfg)
    out = _out_dir(args, cfg)
    emit_outputs(rep.result, out, plots=not args.no_plots)
    write_lyapunov_csv(rep.trace, out / "lyapunov.csv")
    write_json(rep.as_dict(), out / "verify.json")
    for name, ok in rep.checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    mono = rep.monotonicity
    print(f"monotonicity compliance={mono.compliance:.4f} min_R={mono.min_R:.6g}")
    return 0 if rep.passed else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shapeservo", description="Shape servoing of simulated continuum robots.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", help="output directory (default: out/<scenario name>)")
        sp.add_argument("--seed", type=int, help="override the scenario seed")
        sp.add_argument("--no-plots", action="store_true", help="skip SVG plots")

    for name, fn, helptext in [
        ("run", cmd_run, "run one scenario"),
        ("oracle", cmd_oracle, "fit and save ideal weights over a run's visited region"),
        ("verify", cmd_verify, "run plus Lyapunov and gain-condition audit; exit 1 on failure"),
    ]:
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("scenario")
        common(sp)
        sp.set_defaults(func=fn)

    sp = sub.add_parser("repeat", help="repeat a scenario with warm-started weights")
    sp.add_argument("scenario")
    sp.add_argument("--times", type=int, default=4)
    common(sp)
    sp.set_defaults(func=cmd_repeat)

    sp = sub.add_parser("sweep", help="run every *.json scenario in a directory in parallel")
    sp.add_argument("directory")
    sp.add_argument("--jobs", type=int, default=None)
    common(sp)
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ShapeServoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
