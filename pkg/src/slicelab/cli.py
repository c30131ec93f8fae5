"""Command-line entry point: ``slicelab <command> [options]``.

Log verbosity comes from the ``SLICELAB_LOG`` environment variable
(``DEBUG``, ``INFO``, ``WARNING``; default ``WARNING``).
"""

from __future__ import annotations

import argparse
import logging
import os
import re
import sys
from collections import defaultdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import harness
from .agents import OfflineIndex, load_agent, save_agent, train_ppo_offline
from .controlloop import SlaSchedule, XApp, connect, listen, run_closed_loop, serve
from .core import LabConfig, action_bounds, load_config, substream
from .env import SlicingEnv
from .kpm import DatasetWriter, load_dataset
from .ransim import RanSimulator

log = logging.getLogger("slicelab")

CKPT_NAME = re.compile(r"^(?P<kind>[a-z]+)_seed(?P<seed>\d+)_slice(?P<slice>\d+)\.ckpt$")


class CliError(Exception):
    pass


# --------------------------------------------------------------------------
# scenario and checkpoint resolution


def resolve_scenario(args) -> harness.ScenarioSpec:
    name = args.scenario
    if args.config:
        if name not in (None, "custom"):
            raise CliError("--config selects a custom scenario; drop --scenario or use custom:<path>")
        name = f"custom:{args.config}"
    name = name or "stat"
    if name == "stat":
        spec = harness.stat_scenario()
    elif name == "dyn":
        spec = harness.dyn_scenario()
    elif name.startswith("custom:"):
        path = name.split(":", 1)[1]
        spec = harness.custom_scenario(load_config(path), name="custom")
    else:
        raise CliError(f"unknown scenario {name!r} (expected stat, dyn or custom:<path>)")
    lab = spec.lab
    if args.reward_indicator:
        lab.agent.reward_indicator = args.reward_indicator
    if getattr(args, "episodes", None) is not None:
        lab.train_episodes = args.episodes
    if getattr(args, "eval_episodes", None) is not None:
        lab.eval_episodes = args.eval_episodes
    if getattr(args, "episode_len", None) is not None:
        lab.episode_len = args.episode_len
    if args.seed is not None:
        spec.seeds = [args.seed]
        lab.seed = args.seed
    return spec


def load_checkpoints(paths: Sequence[str]) -> dict[str, dict[int, dict[int, object]]]:
    """``{kind: {seed: {slice: agent}}}`` from checkpoint files or ``train`` output directories."""
    files: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            files += sorted(f for f in p.iterdir() if CKPT_NAME.match(f.name))
        elif p.is_file():
            files.append(p)
        else:
            raise CliError(f"{p}: no such checkpoint or directory")
    if not files:
        raise CliError("no checkpoints found")
    out: dict = defaultdict(lambda: defaultdict(dict))
    for f in files:
        m = CKPT_NAME.match(f.name)
        if m is None:
            raise CliError(f"{f}: checkpoint names must look like <kind>_seed<N>_slice<S>.ckpt")
        out[m["kind"]][int(m["seed"])][int(m["slice"])] = load_agent(f)
    return {k: dict(v) for k, v in out.items()}


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    spec = resolve_scenario(args)
    lab = spec.lab
    seed = spec.seeds[0]
    agents = {s: harness.make_agent(args.policy, lab, seed, s) for s in lab.controlled_slices}
    point = spec.eval_grid[0]
    sim = RanSimulator(lab.sim, seed=seed)
    trace = run_closed_loop(sim, agents, SlaSchedule(point), args.epochs,
                            reward_k=lab.agent.reward_k, reward_indicator=lab.agent.reward_indicator)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace.to_csv(out / "simulate_trace.csv")
    for s in sorted(agents):
        rows = trace.for_slice(s)
        viol = np.mean([r.obs.phi_meas < r.obs.phi_sla for r in rows])
        prbs = np.mean([r.action for r in rows])
        print(f"slice {s}: violation_rate={viol:.4f} mean_prbs={prbs:.2f} epochs={len(rows)}")
    return 0


def cmd_collect(args) -> int:
    """Record a dataset with uniformly random PRB decisions (behaviour policy for offline training)."""
    spec = resolve_scenario(args)
    lab = spec.lab
    seed = spec.seeds[0]
    env = SlicingEnv(lab)
    rng = substream("collect", seed)
    sla_rng = substream("collect-sla", seed)
    lo, hi = action_bounds(lab.sim.capacity, len(lab.sim.slices))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "dataset.csv"

    class Uniform:
        def act(self, obs, mode="greedy"):
            return int(rng.integers(lo, hi + 1))

    agents = {s: Uniform() for s in lab.controlled_slices}
    with DatasetWriter(path) as writer:
        for ep in range(lab.train_episodes):
            slas = {s: c.draw(sla_rng) for s, c in enumerate(lab.slas)}
            harness.run_episode(env, agents, harness.episode_seed(seed, "collect", ep), slas,
                                mode="greedy", recorder=writer, episode=ep)
    print(f"wrote {path}")
    return 0


def cmd_train(args) -> int:
    spec = resolve_scenario(args)
    out = Path(args.out)
    if args.dataset:
        return _train_offline(args, spec, out)
    res = harness.run_scenario(spec, args.agent, out_dir=out,
                               eval_during_training=not args.no_periodic_eval)
    _print_summary(res.summary)
    return 0


def _train_offline(args, spec: harness.ScenarioSpec, out: Path) -> int:
    if args.agent != "ppo":
        raise CliError("offline training from --dataset is implemented for --agent ppo")
    lab = spec.lab
    transitions = load_dataset(args.dataset)
    agents_by_seed = {}
    for seed in spec.seeds:
        agents = {}
        for s in lab.controlled_slices:
            rows = [t for t in transitions if t.slice == s]
            if not rows:
                raise CliError(f"dataset has no rows for slice {s}")
            agent = harness.make_agent("ppo", lab, seed, s)
            hist = train_ppo_offline(agent, OfflineIndex(rows, lab.agent.qtab.n_bins), lab.train_episodes,
                                     lab.episode_len, substream("offline", seed, s))
            agent.norm.frozen = True
            agents[s] = agent
            harness.write_rows(out / f"ppo_seed{seed}_slice{s}_offline_training.csv", hist,
                               ["episode", "mean_reward", "mean_prbs"])
            save_agent(agent, out / f"ppo_seed{seed}_slice{s}.ckpt")
        agents_by_seed[seed] = agents
    summary = harness.evaluate_agents(agents_by_seed, spec, "ppo")
    harness.write_summary(out / "ppo_summary.csv", summary)
    _print_summary(summary)
    return 0


def cmd_eval(args) -> int:
    spec = resolve_scenario(args)
    loaded = load_checkpoints(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for kind, by_seed in sorted(loaded.items()):
        _check_slices(kind, by_seed, spec.lab)
        summary = harness.evaluate_agents(by_seed, spec, kind)
        harness.write_summary(out / f"{kind}_eval_summary.csv", summary)
        _print_summary(summary)
    return 0


def cmd_compare(args) -> int:
    spec = resolve_scenario(args)
    groups = [load_checkpoints([p]) for p in args.runs]
    summaries = []
    for group in groups:
        for kind, by_seed in sorted(group.items()):
            _check_slices(kind, by_seed, spec.lab)
            summaries.append(harness.evaluate_agents(by_seed, spec, kind))
    table = harness.compare(summaries)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for summ in summaries:
        harness.write_summary(out / f"{summ.agent}_eval_summary.csv", summ)
    cols = ["agent", "reference", "sla", "slice", "violation_ratio", "prb_ratio", "reward_ratio"]
    harness.write_rows(out / "comparison.csv", table, cols)
    for row in table:
        print(" ".join(f"{c}={row[c]}" for c in cols))
    return 0


def cmd_protocol_serve(args) -> int:
    spec = resolve_scenario(args)
    lab = spec.lab
    server = listen(args.host, args.port)
    host, port = server.getsockname()
    print(f"listening on {host}:{port}", flush=True)
    try:
        ran = serve(RanSimulator(lab.sim, seed=spec.seeds[0]), args.epochs, lab.controlled_slices, server,
                    timeout=args.timeout)
    finally:
        server.close()
    print(f"served {len(ran.applied) - 1} controlled epochs")
    return 0


def cmd_protocol_agent(args) -> int:
    spec = resolve_scenario(args)
    lab = spec.lab
    if args.checkpoint:
        loaded = load_checkpoints(args.checkpoint)
        if len(loaded) != 1 or len(next(iter(loaded.values()))) != 1:
            raise CliError("protocol-agent takes the checkpoints of exactly one agent kind and seed")
        agents = next(iter(next(iter(loaded.values())).values()))
    else:
        agents = {s: harness.make_agent(args.policy, lab, spec.seeds[0], s) for s in lab.controlled_slices}
    xapp = XApp(agents, SlaSchedule(spec.eval_grid[0]), lab.sim.capacity, len(lab.sim.slices),
                reward_k=lab.agent.reward_k, reward_indicator=lab.agent.reward_indicator)
    trace = connect(xapp, (args.host, args.port), timeout=args.timeout)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace.to_csv(out / "protocol_trace.csv")
    print(f"wrote {out / 'protocol_trace.csv'} ({len(trace.complete_rows())} rows)")
    return 0


def _check_slices(kind, by_seed, lab: LabConfig) -> None:
    for seed, agents in by_seed.items():
        if sorted(agents) != lab.controlled_slices:
            raise CliError(f"{kind} seed {seed}: checkpoints for slices {sorted(agents)}, "
                           f"scenario controls {lab.controlled_slices}")


def _print_summary(summary: harness.EvalSummary) -> None:
    for r in summary.rows:
        print(f"{r['agent']} {r['sla']} slice {r['slice']}: reward={r['mean_reward']:.4f} "
              f"violation_rate={r['violation_rate']:.4f}±{r['violation_rate_ci']:.4f} "
              f"mean_prbs={r['mean_prbs']:.2f}±{r['mean_prbs_ci']:.2f}")


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON lab configuration (implies a custom scenario)")
    common.add_argument("--scenario", help="stat, dyn or custom:<path> (default stat)")
    common.add_argument("--seed", type=int, help="single seed (default: the scenario's seed list)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--reward-indicator", choices=["as-written", "corrected"])
    common.add_argument("--episode-len", type=int, help="epochs per episode")

    p = argparse.ArgumentParser(prog="slicelab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run the simulator under a fixed policy")
    s.add_argument("--policy", default="const:max", help="const:<prbs> or const:max")
    s.add_argument("--epochs", type=int, default=100)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("collect", parents=[common], help="record an offline dataset with random actions")
    s.add_argument("--episodes", type=int, help="episodes to record")
    s.set_defaults(func=cmd_collect)

    s = sub.add_parser("train", parents=[common], help="train an agent and export curves and checkpoints")
    s.add_argument("--agent", choices=harness.AGENT_KINDS, default="ppo")
    s.add_argument("--episodes", type=int, help="training episodes")
    s.add_argument("--eval-episodes", type=int, help="episodes per evaluation point")
    s.add_argument("--dataset", help="train PPO offline on this dataset CSV instead of the simulator")
    s.add_argument("--no-periodic-eval", action="store_true", help="skip evaluation during training")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="evaluate checkpoints on the scenario's SLA grid")
    s.add_argument("--checkpoint", nargs="+", required=True, help="checkpoint files or train output dirs")
    s.add_argument("--eval-episodes", type=int)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("compare", parents=[common], help="ratio table of several trained agents")
    s.add_argument("runs", nargs="+", help="train output dirs; the first is the reference")
    s.add_argument("--eval-episodes", type=int)
    s.set_defaults(func=cmd_compare)

    for name, func, what in (("protocol-serve", cmd_protocol_serve, "RAN side: listen for one xApp"),
                             ("protocol-agent", cmd_protocol_agent, "xApp side: connect to a RAN")):
        s = sub.add_parser(name, parents=[common], help=what)
        s.add_argument("--host", default="127.0.0.1")
        s.add_argument("--port", type=int, default=0 if name == "protocol-serve" else 7400)
        s.add_argument("--timeout", type=float, default=5.0)
        if name == "protocol-serve":
            s.add_argument("--epochs", type=int, default=100)
        else:
            s.add_argument("--checkpoint", nargs="+", help="checkpoints to load (default: --policy)")
            s.add_argument("--policy", default="const:max")
        s.set_defaults(func=func)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("SLICELAB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"slicelab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
