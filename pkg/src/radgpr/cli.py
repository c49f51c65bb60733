"""Command line entry point: ``radgpr validate | run | sigma-f``.

Exit codes: 0 success, 1 validation failure, 2 usage or parse error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigParseError, digest, load_config
from .kernel import KernelError, SigmaFSelectionError, exchange_and_select, sigma_condition
from .netgraph import ConnectivityError, validate
from .simharness import ConfigError, MetricsRow, SimResult, run

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("radgpr")


@dataclass
class RunManifest:
    config_digest: str
    seed: int
    version: str
    outputs: dict[str, str]
    wall_clock_s: float


def fmt(x) -> str:
    """Shortest round-trip representation for floats; ints as-is."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_metrics(path: Path, rows: list[MetricsRow]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MetricsRow.FIELDS)
        for r in rows:
            w.writerow([fmt(getattr(r, f)) for f in MetricsRow.FIELDS])


def write_predictions(path: Path, res: SimResult) -> None:
    dim = res.z_star.shape[1]
    header = [f"z{k + 1}" for k in range(dim)] + ["eta"]
    cols = [res.z_star[:, k] for k in range(dim)] + [res.eta]
    for b in res.bundles:
        header += [f"mu_local_{b.agent}", f"var_local_{b.agent}", f"mu_fused_{b.agent}", f"var_fused_{b.agent}"]
        cols += [b.local_mean, b.local_var, b.fused.mu_tilde, b.fused.var_tilde]
    header += ["mu_central", "var_central"]
    cols += [res.central_mean, res.central_var]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([fmt(v) for v in row])


def cmd_validate(args) -> int:
    cfg, _ = load_config(args.config, args.seed)
    report = validate(cfg.schedule)
    for line in report.lines():
        print(line)
    problems = cfg.problems()
    k = cfg.kernel
    rho = np.linspace(0, 10, 101)
    vals = k.kappa(rho)
    if not (vals[0] == k.sigma_f_sq and np.all(np.diff(vals) <= 0) and np.all(vals > 0)):
        problems.append("kernel violates decomposition/boundedness/monotonicity")
    if k.sigma_f_sq >= 1:
        cond = sigma_condition(k.sigma_f_sq, cfg.noise)
        print(f"sigma_f_sq: {k.sigma_f_sq!r} (mode {cfg.sigma_f_mode})")
        print(f"sigma_f condition: lhs={cond.lhs!r} rhs={cond.rhs!r} holds={cond.holds}")
    for p in problems:
        print(f"config problem: {p}")
    ok = report.ok and not problems
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_INVALID


def cmd_run(args) -> int:
    cfg, raw = load_config(args.config, args.seed)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        print(f"error: output directory {out} is not writable: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = validate(cfg.schedule)
    problems = cfg.problems() + report.violations
    if problems:
        for p in problems:
            print(f"invalid: {p}", file=sys.stderr)
        return EXIT_INVALID
    start = time.perf_counter()
    res = run(cfg, threads=args.threads)
    files = {
        "metrics": out / "metrics.csv",
        "final_predictions": out / "final_predictions.csv",
        "manifest": out / "manifest.json",
    }
    write_metrics(files["metrics"], res.rows)
    write_predictions(files["final_predictions"], res)
    manifest = RunManifest(
        config_digest=digest(raw),
        seed=cfg.seed,
        version=__version__,
        outputs={k: str(v) for k, v in files.items()},
        wall_clock_s=time.perf_counter() - start,
    )
    files["manifest"].write_text(json.dumps(asdict(manifest), indent=2) + "\n")
    d = res.diagnostics
    print(f"rounds: {cfg.rounds}  agents: {cfg.n_agents}  sigma_f_sq: {res.kernel.sigma_f_sq!r}")
    print(f"strict variance improvements: {d.strict_improvements}")
    print(f"fused variance non-positive: {d.nonpositive_fused}  above local: {d.fused_above_local}")
    for i in range(cfg.n_agents):
        last = [r for r in res.rows if r.agent == i][-1]
        print(f"agent {i}: err_local={last.err_local:.4f} err_fused={last.err_fused:.4f} "
              f"err_central={last.err_central:.4f}")
    print(f"wrote {', '.join(str(p) for p in files.values())}")
    return EXIT_OK


def cmd_sigma_f(args) -> int:
    cfg, _ = load_config(args.config, args.seed)
    try:
        agreed, local = exchange_and_select(cfg.schedule, cfg.noise, max(1.0, cfg.sigma_f_start))
    except ConnectivityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SigmaFSelectionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    cond = sigma_condition(agreed, cfg.noise)
    c = cond.constants
    print(f"sigma_f_sq: {agreed!r}")
    print("local choices: " + " ".join(repr(v) for v in local))
    print(f"c: {c.c!r}")
    print("psi: " + " ".join(repr(float(p)) for p in c.psi))
    print(f"eps_plus: {c.eps_plus!r}")
    print(f"lhs: {cond.lhs!r}")
    print(f"rhs: {cond.rhs!r}")
    print(f"holds: {cond.holds}")
    return EXIT_OK if cond.holds else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="radgpr", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="YAML run configuration")
        sp.add_argument("--seed", type=int, default=None, help="override the configured seed")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for per-agent work")
        sp.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("validate", help="check graph assumptions and kernel settings"))
    sp = sub.add_parser("run", help="run the simulation and write CSV outputs")
    common(sp)
    sp.add_argument("--out", required=True, help="output directory")
    common(sub.add_parser("sigma-f", help="select sigma_f^2 by the distributed protocol"))
    return p


COMMANDS = {"validate": cmd_validate, "run": cmd_run, "sigma-f": cmd_sigma_f}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except ConfigParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, KernelError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
