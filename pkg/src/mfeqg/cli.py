"""Command-line entry point: ``mfeqg <command> --config scenario.yaml``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure
(Riccati blow-up, NaN), 4 acceptance-band violation under --strict.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import io
import json
import os
import sys

import numpy as np

from mfeqg import __version__
from mfeqg.config import ConfigError, ScenarioConfig, load_config
from mfeqg.equilibrium import simulate_market
from mfeqg.factors import simulate_factors, uniform_grid
from mfeqg.model import ModelError, smallness_check, zeta, zeta_ode_residual
from mfeqg.riccati import solve_backward
from mfeqg.verify import bsde_residual_study, clearing_sweep, variance_bound_check

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_BAND = 0, 2, 3, 4

SLOPE_BAND = (-1.25, -0.75)
ORDER_BAND = (0.75, 1.25)
CLEARING_DROP = 50.0
MEAN_Z_LIMIT = 4.0


class BandViolation(Exception):
    pass


class Context:
    def __init__(self, cfg: ScenarioConfig, args):
        self.cfg = cfg
        self.seed = cfg.run.seed if args.seed is None else args.seed
        self.out = os.environ.get("MFG_EQG_OUT") or args.out or cfg.run.out
        self.threads = args.threads or os.cpu_count() or 1
        self.strict = args.strict
        os.makedirs(self.out, exist_ok=True)

    def provenance(self) -> str:
        line = f"mfeqg {__version__} config_sha256={self.cfg.sha256} seed={self.seed}"
        if not self.strict:
            stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
            line += f" generated={stamp}"
        return line

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def write_csv(self, name: str, header, rows):
        buf = io.StringIO()
        buf.write(f"# {self.provenance()}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        with open(self.path(name), "w", newline="") as fh:
            fh.write(buf.getvalue())

    def write_json(self, name: str, payload: dict):
        payload = dict(payload, provenance=self.provenance())
        with open(self.path(name), "w") as fh:
            fh.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return v


def _solve(ctx: Context, steps: int | None = None):
    cfg = ctx.cfg
    return solve_backward(cfg.model, cfg.factors, cfg.liability, steps or cfg.run.steps,
                          threshold=cfg.run.threshold)


def _need_market(cfg: ScenarioConfig):
    if cfg.market is None:
        raise ConfigError(f"{cfg.path}:1: this command needs a 'market' section")
    return cfg.market


def cmd_zeta(ctx: Context):
    params = ctx.cfg.model
    grid = uniform_grid(params.T, ctx.cfg.run.steps)
    z = zeta(params, grid)
    res = zeta_ode_residual(params, grid)
    ctx.write_csv("zeta.csv", ["t", "zeta", "residual"], zip(grid, z, res))


def cmd_solve_riccati(ctx: Context):
    ric = _solve(ctx)
    buf = io.StringIO()
    ric.to_csv(buf, comment=ctx.provenance())
    with open(ctx.path("riccati.csv"), "w", newline="") as fh:
        fh.write(buf.getvalue())


def cmd_simulate(ctx: Context):
    cfg = ctx.cfg
    market = _need_market(cfg)
    ric = _solve(ctx)
    bundle = simulate_factors(cfg.factors, ric.grid, cfg.run.N, ctx.seed)
    mp = simulate_market(cfg.model, cfg.factors, cfg.liability, ric, market, bundle)
    ag = mp.agents
    if not all(np.all(np.isfinite(a)) for a in (ag.wealth, ag.consumption, ag.habit, mp.theta)):
        raise FloatingPointError("non-finite values in the simulated market")
    d0, n = cfg.factors.d0, cfg.factors.n
    header = (["t", "agent", "wealth", "consumption", "habit", "Y", "F"]
              + [f"p[{j}]" for j in range(d0)] + [f"pi[{j}]" for j in range(n)])

    def rows():
        for i in range(cfg.run.N):
            for k, t in enumerate(ric.grid):
                yield ([t, i, ag.wealth[i, k], ag.consumption[i, k], ag.habit[i, k],
                        mp.Y[i, k], mp.F[i, k]]
                       + list(ag.pStar[i, k]) + list(ag.piStar[i, k]))

    ctx.write_csv("agents.csv", header, rows())
    theta = mp.theta[0]
    ctx.write_csv("theta.csv", ["t"] + [f"theta[{j}]" for j in range(d0)]
                  + [f"x0[{j}]" for j in range(d0)],
                  ([t] + list(theta[k]) + list(bundle.x0[0, k]) for k, t in enumerate(ric.grid)))


def cmd_clearing_sweep(ctx: Context):
    cfg = ctx.cfg
    market = _need_market(cfg)
    ric = _solve(ctx)
    rep = clearing_sweep(cfg.model, cfg.factors, cfg.liability, ric, market, cfg.run.Ns,
                         cfg.run.pathsPerN, ctx.seed, threads=ctx.threads)
    vals = rep.clearingValues
    drop = vals[0] / vals[-1] if vals[-1] > 0 else float("inf")
    checks = {
        "slopeInBand": SLOPE_BAND[0] <= rep.fittedSlope <= SLOPE_BAND[1],
        "dropAtLeast50": drop > CLEARING_DROP,
        "pStarMeanWithin4SE": rep.pStarMeanMaxZ <= MEAN_Z_LIMIT,
    }
    ctx.write_json("clearing.json", dict(rep.to_dict(), drop=drop, checks=checks))
    ctx.write_csv("clearing.csv", list(rep.csv_columns), rep.csv_rows())
    if ctx.strict and not all(checks.values()):
        raise BandViolation(f"clearing checks failed: {checks}")


def cmd_residual(ctx: Context):
    cfg = ctx.cfg
    T = cfg.model.T
    mesh = cfg.run.meshSizes or [T / 125, T / 250, T / 500, T / 1000]
    fine = int(round(T / min(mesh)))
    ric = _solve(ctx, fine)
    rep = bsde_residual_study(cfg.model, cfg.factors, cfg.liability, ric, mesh,
                              cfg.run.paths, ctx.seed)
    checks = {
        "orderInBand": ORDER_BAND[0] <= rep.fittedOrder <= ORDER_BAND[1],
        "monotone": rep.monotone,
        "terminalExact": rep.terminalError == 0.0,
    }
    ctx.write_json("residual.json", dict(rep.to_dict(), checks=checks))
    ctx.write_csv("residual.csv", list(rep.csv_columns), rep.csv_rows())
    if ctx.strict and not all(checks.values()):
        raise BandViolation(f"residual checks failed: {checks}")


def cmd_check_smallness(ctx: Context):
    cfg = ctx.cfg
    s = cfg.smallness
    if s is None:
        raise ConfigError(f"{cfg.path}:1: this command needs a 'smallness' section")
    rep = smallness_check((s.gammaLow, s.gammaHigh), s.gammaHatInvMean, s.FTbound,
                          s.gIntegralBound)
    payload = {
        "smallness": rep.to_dict(),
        "applicableToEQG": False,
        "note": "bounded-liability condition; EQG liabilities are unbounded quadratic forms, "
                "so the report only applies to user-supplied sup-norm bounds",
    }
    if s.varsigma is not None:
        payload["varianceBound"] = variance_bound_check(cfg.factors, s.varsigma).to_dict()
    ctx.write_json("smallness.json", payload)


COMMANDS = {
    "zeta": (cmd_zeta, "habit coefficient and its ODE residual on the mesh"),
    "solve-riccati": (cmd_solve_riccati, "backward Riccati system, written as CSV"),
    "simulate": (cmd_simulate, "one market of N agents under the equilibrium strategies"),
    "clearing-sweep": (cmd_clearing_sweep, "mean stock holding versus N"),
    "residual": (cmd_residual, "pathwise BSDE residual under mesh refinement"),
    "check-smallness": (cmd_check_smallness, "bounded-liability smallness and variance bound"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfeqg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mfeqg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, metavar="DIR")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--strict", action="store_true",
                       help="fail on statistical band violations; omit timestamps")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    func = COMMANDS[args.command][0]
    try:
        ctx = Context(load_config(args.config), args)
        func(ctx)
    except (ConfigError, ModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArithmeticError as exc:
        # RiccatiBlowUp and FloatingPointError both land here
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BandViolation as exc:
        print(f"band violation: {exc}", file=sys.stderr)
        return EXIT_BAND
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
