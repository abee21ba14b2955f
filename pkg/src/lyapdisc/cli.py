"""Command line front end: ``lyapdisc {lyapunov,construct,invariants,stats,sweep}``.

Exit status is 0 when every verdict passes, 1 when a check fails, 2 for
infeasible or hypothesis-violating parameters and 3 when the time budget runs out.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .harness import COCYCLES, COMMANDS, ExperimentConfig, exit_code, run

log = logging.getLogger("lyapdisc")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.split(",") if v)


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split(",") if v)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    d = ExperimentConfig()
    a = common.add_argument
    a("--sigma", type=float, default=d.sigma)
    a("--p", type=float, default=d.p)
    a("--alpha", type=float, default=d.alpha)
    a("--epsilon", type=float, default=d.epsilon)
    a("--kappa", type=float, default=d.kappa)
    a("--N", type=int, default=None, help="override the smallest feasible N")
    a("--orbit-length", type=int, default=d.orbit_length)
    a("--replicas", type=int, default=d.replicas)
    a("--samples", type=int, default=d.samples)
    a("--seed", type=int, default=d.seed)
    a("--workers", type=int, default=d.workers)
    a("--output", default=None, help="write the record here (default: stdout)")
    a("--format", choices=("csv", "json"), default=d.format)
    a("--tolerance-par", type=float, default=d.tolerance_par)
    a("--tolerance-det", type=float, default=d.tolerance_det)
    a("--eta-hat", type=float, default=d.eta_hat)
    a("--budget", type=float, default=None, dest="budget_seconds",
      help="wall-clock budget in seconds")
    a("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lyapdisc", description="Lyapunov exponent experiments for SL(2,R) cocycles over the Bernoulli shift.", epilog="exit status: 0 pass, 1 failed check, 2 infeasible or hypothesis violated, 3 budget exceeded")
    sub = p.add_subparsers(dest="subcommand", required=True)
    ly = sub.add_parser("lyapunov", parents=[common], help="estimate λ_+ of a cocycle")
    ly.add_argument("--cocycle", choices=COCYCLES, default="a_sigma")
    ly.add_argument("--t", type=float, default=1.0, help="homotopy parameter")
    ly.add_argument("--method", choices=("mc", "induced", "both"), default="mc")
    sub.add_parser("construct", parents=[common], help="build L and report margins and ledger")
    inv = sub.add_parser("invariants", parents=[common], help="check L along sampled excursions")
    inv.add_argument("--t", type=float, default=1.0)
    st = sub.add_parser("stats", parents=[common], help="return-time statistics")
    st.add_argument("--beta", type=float, default=d.beta)
    st.add_argument("--chernoff-n", type=_ints, default=d.chernoff_n)
    st.add_argument("--tail-N", type=_ints, default=d.tail_N)
    sw = sub.add_parser("sweep", parents=[common], help="λ_+(L_t) over N and t grids")
    sw.add_argument("--N-grid", type=_ints, default=())
    sw.add_argument("--t-grid", type=_floats, default=d.t_grid)
    return p


def config_from_args(ns: argparse.Namespace) -> ExperimentConfig:
    d = vars(ns).copy()
    d.pop("verbose", None)
    return ExperimentConfig.from_dict(d)


def main(argv: list[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = config_from_args(ns)
    rec = run(cfg)
    if rec.error:
        log.error("%s: %s", rec.error["kind"], rec.error["message"])
    for name, ok in rec.verdicts.items():
        if not ok:
            log.warning("check failed: %s", name)
    if cfg.output:
        rec.write(cfg.output, cfg.format)
    else:
        sys.stdout.write(rec.to_csv() if cfg.format == "csv" else rec.to_json() + "\n")
    return exit_code(rec)


if __name__ == "__main__":
    sys.exit(main())
