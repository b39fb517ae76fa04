"""Command-line entry point: ``thermo-rl {evolve,ppo,rollout,oracle,fit}``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import config as cfgmod
from .config import Mode, RunConfig
from .cycles import detect_cycle, find_cycles, fit_branches
from .engine import ConfigError, UsageError, replay, rollout
from .evolve import run as run_evolution
from .io import CsvLog, export_trajectory, load_trajectory, rows_match_replay
from .oracle import Family, Infeasible, oracle_best_cycle
from .policy import load_checkpoint, save_checkpoint
from .ppo import train

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

FORMATS_HELP = """\
files:
  config        flat key=value text, one pair per line, '#' starts a comment.
                Every key can be overridden with --set key=value.
                action_set takes a preset (canonical, irreversible,
                no_adiabatic, no_isothermal) or a comma list of action labels.
  trajectory    JSON Lines, one object per step with fields t, action, V, T, P,
                dW, dQ, dQ_in, cumW, cumQin, eta, W_budget, Q_budget; floats
                carry 17 significant digits; null marks undefined values.
  csv           first line '# config_hash=<hex> seed=<n>', then a header row.
  checkpoint    20-byte header (b'THRM', version, n_in, n_hidden, n_out as
                little-endian uint32) followed by little-endian float64
                parameters in the order w_ih, b_h, w_ho.

valid config keys: """ + ", ".join(cfgmod.VALID_KEYS)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--output-dir", help="directory for all outputs (default: runs)")

    p = _Parser(prog="thermo-rl", description="Learn thermodynamic cycles on a model heat engine.",
                epilog=FORMATS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("evolve", parents=[common], help="elitist neuroevolution")
    e.add_argument("--seed", type=int, required=True)

    q = sub.add_parser("ppo", parents=[common], help="PPO on the budgeted engine")
    q.add_argument("--seed", type=int, required=True)

    r = sub.add_parser("rollout", parents=[common], help="roll out a checkpointed policy")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--sample", action="store_true", help="sample from the softmax instead of argmax")
    r.add_argument("--seed", type=int, default=None, help="rng seed for --sample")
    r.add_argument("--out", help="trajectory path (default: <output-dir>/rollout.jsonl)")

    o = sub.add_parser("oracle", parents=[common], help="best cycle of a family by exhaustive search")
    o.add_argument("--family", required=True, help="carnot, stirling, otto or hybrid")

    f = sub.add_parser("fit", parents=[common], help="fit P = a V^b on each branch of a trajectory's cycle")
    f.add_argument("--trajectory", required=True)
    return p


def _print(obj) -> None:
    print(json.dumps(obj, indent=2))


def _outdir(run: RunConfig) -> Path:
    run.output_dir.mkdir(parents=True, exist_ok=True)
    return run.output_dir


def _cmd_evolve(run: RunConfig) -> int:
    out = _outdir(run)
    h, seed = run.config_hash, run.seed
    gens = CsvLog(out / "generations.csv", ["generation", "max_eta", "mean_eta", "n_defined"], h, seed)
    pop = CsvLog(out / "population.csv", ["generation", "slot", "fitness"], h, seed)

    def on_generation(gen, best, best_fit):
        st = gen.stats
        gens.write({"generation": st.index, "max_eta": st.max, "mean_eta": st.mean, "n_defined": st.n_defined})
        for slot, fit in enumerate(st.fitnesses):
            pop.write({"generation": st.index, "slot": slot, "fitness": fit})
        save_checkpoint(best, out / "best.ckpt")
        if st.index & (st.index - 1) == 0:
            save_checkpoint(best, out / f"best_gen{st.index}.ckpt")

    with gens, pop:
        result = run_evolution(run.evo, run.engine, on_generation)
    traj = rollout(run.engine, result.best)
    export_trajectory(run.engine, traj, out / "best_trajectory.jsonl")
    cycle = detect_cycle(run.engine, traj)
    _print({"best_fitness": result.best_fitness, "generations": len(result.stats),
            "cycle": cycle.to_dict() if cycle else None})
    return EXIT_OK


def _cmd_ppo(run: RunConfig) -> int:
    out = _outdir(run)
    cols = ["update_index", "env_steps", "mean_return", "best_eta", "loss_clip", "loss_vf", "entropy",
            "grad_steps", "best_cycle_eta"]
    with CsvLog(out / "learning_curve.csv", cols, run.config_hash, run.seed) as log:
        result = train(run.ppo, run.engine, lambda rec: log.write(vars(rec)))
    save_checkpoint(result.best, out / "best.ckpt")
    save_checkpoint(result.final, out / "final.ckpt")
    if result.best_trajectory is not None:
        export_trajectory(run.engine, result.best_trajectory, out / "best_trajectory.jsonl")
    _print({"best_eta": result.best_eta, "updates": len(result.records),
            "best_cycle": result.best_cycle.to_dict() if result.best_cycle else None})
    return EXIT_OK


def _cmd_rollout(run: RunConfig, args) -> int:
    net = load_checkpoint(args.checkpoint, n_actions=run.engine.n_actions)
    if net.shape.n_actions != run.engine.n_actions:
        raise UsageError(f"checkpoint has {net.shape.n_actions} action outputs, config has {run.engine.n_actions}")
    if args.sample:
        traj = rollout(run.engine, net, "sample", np.random.default_rng(args.seed))
    else:
        traj = rollout(run.engine, net)
    path = Path(args.out) if args.out else _outdir(run) / "rollout.jsonl"
    export_trajectory(run.engine, traj, path)
    cycles = [detect_cycle(run.engine, traj)] if not args.sample else find_cycles(run.engine, traj)
    cycles = [c for c in cycles if c is not None]
    best = max((c for c in cycles if c.eta is not None), key=lambda c: c.eta, default=None)
    _print({"steps": len(traj), "eta_best": traj.eta_best, "trajectory": str(path),
            "cycle": best.to_dict() if best else (cycles[0].to_dict() if cycles else None)})
    return EXIT_OK


def _cmd_oracle(run: RunConfig, args) -> int:
    try:
        family = Family.parse(args.family)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        report = oracle_best_cycle(run.engine, family)
    except Infeasible as exc:
        _print({"family": family.value, "infeasible": str(exc)})
        return EXIT_RUNTIME
    _print(report.to_dict())
    return EXIT_OK


def _cmd_fit(run: RunConfig, args) -> int:
    rows = load_trajectory(args.trajectory)
    engine = run.engine
    if rows and rows[0]["W_budget"] is not None and not engine.budgets_enabled:
        engine = replace(engine, budgets_enabled=True)
    traj = replay(engine, [r["action"] for r in rows])
    if not rows_match_replay(engine, rows, traj):
        raise RuntimeError(f"{args.trajectory} does not replay under the given engine config")
    cycle = detect_cycle(engine, traj)
    if cycle is None:
        _print({"cycle": None, "fits": []})
        return EXIT_OK
    fits = [{"family": f.family, "exponent": f.exponent, "prefactor": f.prefactor, "residual": f.residual}
            for f in fit_branches(cycle)]
    _print({"cycle": cycle.to_dict(), "fits": fits})
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parser().parse_args(argv)
        overrides = list(args.set)
        if args.output_dir:
            overrides.append(f"output_dir={args.output_dir}")
        seed = getattr(args, "seed", None) if args.command in ("evolve", "ppo") else None
        run = cfgmod.load(args.command, args.config, overrides, seed)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("usage: thermo-rl {evolve,ppo,rollout,oracle,fit} [--help]", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help exits through argparse
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        if run.mode is Mode.EVOLVE:
            return _cmd_evolve(run)
        if run.mode is Mode.PPO:
            return _cmd_ppo(run)
        if run.mode is Mode.ROLLOUT:
            return _cmd_rollout(run, args)
        if run.mode is Mode.ORACLE:
            return _cmd_oracle(run, args)
        return _cmd_fit(run, args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
