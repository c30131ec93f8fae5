"""Scenarios, training/evaluation orchestration, comparison tables and CSV exports."""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy import stats

from .agents import ConstantAgent, DQNAgent, PPOAgent, QLearningAgent, Rollout, save_agent
from .core import (
    LabConfig,
    Observation,
    SimConfig,
    SlaConfig,
    SlaSpec,
    SliceConfig,
    Transition,
    action_bounds,
    substream,
)
from .env import SlicingEnv
from .kpm import DatasetWriter
from .rlcore import log_softmax

log = logging.getLogger(__name__)

AGENT_KINDS = ("ppo", "dqn", "qtab")


@dataclass
class ScenarioSpec:
    """A named training/evaluation setup.

    ``eval_grid`` lists SLA points; each maps slice id to the SLA enforced
    during a greedy evaluation run.
    """

    name: str
    lab: LabConfig
    eval_grid: list[dict[int, SlaSpec]]
    seeds: list[int] = field(default_factory=lambda: [0])

    def __post_init__(self) -> None:
        for point in self.eval_grid:
            for s, sla in point.items():
                rng = self.lab.slas[s].lambda_range
                if rng is not None and not rng[0] <= sla.lambda_ms <= rng[1]:
                    raise ValueError(f"evaluation lambda {sla.lambda_ms} outside training range {rng}")


def grid_label(point: Mapping[int, SlaSpec]) -> str:
    return ";".join(f"s{s}:{sla.lambda_ms:g}ms@{sla.phi_sla:g}" for s, sla in sorted(point.items()))


def stat_scenario(seeds: Sequence[int] = (0,), **overrides) -> ScenarioSpec:
    """Two slices with fixed SLAs of 110 ms and 50 ms at 0.99 conformance."""
    lab = LabConfig(
        sim=SimConfig(slices=[SliceConfig(n_ues=2), SliceConfig(n_ues=2)]),
        slas=[SlaConfig(110.0, 0.99), SlaConfig(50.0, 0.99)],
        train_episodes=300,
        eval_episodes=50,
    )
    for k, v in overrides.items():
        setattr(lab, k, v)
    point = {0: SlaSpec(110.0, 0.99), 1: SlaSpec(50.0, 0.99)}
    return ScenarioSpec("stat", lab, [point], list(seeds))


def dyn_scenario(seeds: Sequence[int] = (0, 1, 2, 3, 4), **overrides) -> ScenarioSpec:
    """One slice whose latency bound is redrawn from U[10, 110] ms every episode, phi = 0.9."""
    lab = LabConfig(
        sim=SimConfig(slices=[SliceConfig(n_ues=4)]),
        slas=[SlaConfig(110.0, 0.9, lambda_range=(10.0, 110.0))],
        train_episodes=300,
        eval_episodes=20,
        eval_lambdas=[30.0, 110.0],
    )
    for k, v in overrides.items():
        setattr(lab, k, v)
    grid = [{0: SlaSpec(lam, 0.9)} for lam in lab.eval_lambdas]
    return ScenarioSpec("dyn", lab, grid, list(seeds))


def custom_scenario(lab: LabConfig, name: str = "custom") -> ScenarioSpec:
    """Scenario from a config file: fixed SLAs evaluate as-is, ranged slices over ``eval_lambdas``."""
    fixed = {s: SlaSpec(c.lambda_ms, c.phi_sla) for s, c in enumerate(lab.slas)}
    ranged = [s for s, c in enumerate(lab.slas) if c.lambda_range is not None]
    if ranged and lab.eval_lambdas:
        grid = []
        for lam in lab.eval_lambdas:
            point = dict(fixed)
            for s in ranged:
                point[s] = SlaSpec(lam, lab.slas[s].phi_sla)
            grid.append(point)
    else:
        grid = [fixed]
    return ScenarioSpec(name, lab, grid, [lab.seed])


def episode_seed(seed: int, tag: str, episode: int) -> int:
    return int(substream(tag, seed, episode).integers(0, 2**62))


# --------------------------------------------------------------------------
# agents


def n_actions(lab: LabConfig) -> int:
    return action_bounds(lab.sim.capacity, len(lab.sim.slices))[1]


def make_agent(kind: str, lab: LabConfig, seed: int, slice_id: int):
    rng = substream(f"agent/{kind}/{slice_id}", seed)
    n = n_actions(lab)
    if kind == "ppo":
        return PPOAgent(n, copy.deepcopy(lab.agent.ppo), rng)
    if kind == "dqn":
        return DQNAgent(n, copy.deepcopy(lab.agent.dqn), rng)
    if kind == "qtab":
        return QLearningAgent(n, copy.deepcopy(lab.agent.qtab), rng)
    if kind.startswith("const:"):
        value = kind.split(":", 1)[1]
        return ConstantAgent(n if value == "max" else int(value))
    raise ValueError(f"unknown agent kind {kind!r}")


# --------------------------------------------------------------------------
# episodes


@dataclass
class EpisodeMetrics:
    reward: float
    violation_rate: float
    mean_prbs: float


def _draw_slas(lab: LabConfig, rng) -> dict[int, SlaSpec]:
    return {s: c.draw(rng) for s, c in enumerate(lab.slas)}


def run_episode(env: SlicingEnv, agents: Mapping[int, object], seed: int, slas: Mapping[int, SlaSpec],
                mode: str = "greedy", learner: Optional[Callable] = None,
                recorder: Optional[DatasetWriter] = None, episode: int = 0) -> dict[int, EpisodeMetrics]:
    """Roll one episode; ``learner(slice, obs, action, reward, next_obs, last)`` sees every step."""
    obs = env.reset(seed, slas)
    horizon = env.lab.episode_len
    rewards = {s: [] for s in agents}
    viol = {s: [] for s in agents}
    prbs = {s: [] for s in agents}
    for n in range(horizon):
        actions = {s: int(agent.act(obs[s], mode)) for s, agent in agents.items()}
        nxt, r, info = env.step(actions)
        for s in agents:
            a = info.allocation[s]
            rewards[s].append(r[s])
            viol[s].append(info.violated[s])
            prbs[s].append(a)
            if learner is not None:
                learner(s, obs[s], actions[s], r[s], nxt[s], n == horizon - 1)
            if recorder is not None:
                recorder.record_transition(Transition(obs[s], a, r[s], nxt[s], episode, n, s))
        obs = nxt
    return {
        s: EpisodeMetrics(float(np.sum(rewards[s])), float(np.mean(viol[s])), float(np.mean(prbs[s])))
        for s in agents
    }


def evaluate(agents: Mapping[int, object], lab: LabConfig, point: Mapping[int, SlaSpec],
             episodes: int, seed: int) -> dict[int, list[EpisodeMetrics]]:
    """Greedy evaluation on a fixed SLA point over ``episodes`` seeded episodes."""
    env = SlicingEnv(lab)
    out: dict[int, list[EpisodeMetrics]] = {s: [] for s in agents}
    for e in range(episodes):
        res = run_episode(env, agents, episode_seed(seed, "eval", e), point, mode="greedy")
        for s, m in res.items():
            out[s].append(m)
    return out


# --------------------------------------------------------------------------
# training


class _PpoTrainer:
    def __init__(self, agents):
        self.agents = agents
        self.rollouts = {s: Rollout() for s in agents}
        self.raw = {s: [] for s in agents}

    def act_mode(self):
        return "sample"

    def __call__(self, s, obs, action, reward, next_obs, last):
        # PPOAgent.act in sample mode does not return log-probs, so recompute them here
        agent = self.agents[s]
        x = agent.norm(obs.as_array())
        logits = agent.actor(x)
        logp = float(log_softmax(logits)[action - 1])
        v = agent.value(x)
        nv = agent.value(agent.norm(next_obs.as_array()))
        self.rollouts[s].add(x, action - 1, reward, v, logp, nv, False, last)
        self.raw[s].append(obs.as_array())

    def end_episode(self, episode):
        for s, agent in self.agents.items():
            if self.raw[s]:
                agent.norm.update(np.array(self.raw[s]))
            self.raw[s] = []
            if (episode + 1) % agent.cfg.rollout_episodes == 0 and len(self.rollouts[s]):
                agent.update(self.rollouts[s])
                self.rollouts[s] = Rollout()


class _DqnTrainer:
    def __init__(self, agents):
        self.agents = agents

    def act_mode(self):
        return "sample"

    def __call__(self, s, obs, action, reward, next_obs, last):
        self.agents[s].observe(obs.as_array(), action - 1, reward, next_obs.as_array(), False)

    def end_episode(self, episode):
        pass


class _QTrainer:
    def __init__(self, agents):
        self.agents = agents

    def act_mode(self):
        return "sample"

    def __call__(self, s, obs, action, reward, next_obs, last):
        self.agents[s].observe(Transition(obs, action, reward, next_obs))

    def end_episode(self, episode):
        pass


class _NoTrainer:
    def __init__(self, agents):
        self.agents = agents

    def act_mode(self):
        return "greedy"

    def __call__(self, *args):
        pass

    def end_episode(self, episode):
        pass


_TRAINERS = {"ppo": _PpoTrainer, "dqn": _DqnTrainer, "qtab": _QTrainer}


def _calibrate_qtables(agents, lab: LabConfig, seed: int) -> None:
    """Bin ranges for tabular agents from two uniformly random episodes."""
    env = SlicingEnv(lab)
    rng = substream("qtab-calibration", seed)
    lo, hi = action_bounds(lab.sim.capacity, len(lab.sim.slices))
    seen = {s: [] for s in agents}
    for e in range(2):
        obs = env.reset(episode_seed(seed, "calib", e), _draw_slas(lab, rng))
        for _ in range(lab.episode_len):
            for s in agents:
                seen[s].append(obs[s])
            obs, _, _ = env.step({s: int(rng.integers(lo, hi + 1)) for s in agents})
    for s, agent in agents.items():
        agent.calibrate(seen[s])


@dataclass
class TrainResult:
    kind: str
    seed: int
    agents: dict[int, object]
    curve: list[dict]
    eval_curve: list[dict]


def train(kind: str, lab: LabConfig, seed: int, eval_grid: Sequence[Mapping[int, SlaSpec]] = (),
          eval_episodes: Optional[int] = None, progress: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train one agent per controlled slice online on the simulator."""
    controlled = lab.controlled_slices
    agents = {s: make_agent(kind, lab, seed, s) for s in controlled}
    if kind == "qtab":
        _calibrate_qtables(agents, lab, seed)
    trainer = _TRAINERS.get(kind, _NoTrainer)(agents)
    env = SlicingEnv(lab)
    sla_rng = substream("sla", seed)
    curve, eval_curve = [], []
    n_eval = lab.eval_episodes if eval_episodes is None else eval_episodes
    for ep in range(lab.train_episodes):
        slas = _draw_slas(lab, sla_rng)
        res = run_episode(env, agents, episode_seed(seed, "train", ep), slas,
                          mode=trainer.act_mode(), learner=trainer)
        trainer.end_episode(ep)
        for s, m in res.items():
            row = {"episode": ep, "slice": s, "lambda_ms": slas[s].lambda_ms,
                   "mean_reward": m.reward / lab.episode_len, "violation_rate": m.violation_rate,
                   "mean_prbs": m.mean_prbs}
            curve.append(row)
            if progress is not None:
                progress(row)
        if lab.eval_every and eval_grid and ((ep + 1) % lab.eval_every == 0):
            for point in eval_grid:
                ev = evaluate(agents, lab, point, n_eval, seed)
                for s, ms in ev.items():
                    eval_curve.append({"episode": ep + 1, "sla": grid_label(point), "slice": s,
                                       **_summarise(ms)})
    for agent in agents.values():
        if hasattr(agent, "norm"):
            agent.norm.frozen = True
    return TrainResult(kind, seed, agents, curve, eval_curve)


def _summarise(ms: Sequence[EpisodeMetrics]) -> dict:
    return {
        "mean_reward": float(np.mean([m.reward for m in ms])),
        "violation_rate": float(np.mean([m.violation_rate for m in ms])),
        "mean_prbs": float(np.mean([m.mean_prbs for m in ms])),
    }


# --------------------------------------------------------------------------
# summaries


def ci_halfwidth(values: Sequence[float], level: float = 0.95) -> float:
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return 0.0
    sd = v.std(ddof=1)
    if sd == 0:
        return 0.0
    return float(stats.t.ppf(0.5 + level / 2, v.size - 1) * sd / math.sqrt(v.size))


@dataclass
class EvalSummary:
    """Per-(SLA point, slice) metrics; ``per_seed`` keeps paired raw values."""

    agent: str
    rows: list[dict]

    def get(self, sla: str, slice_id: int) -> dict:
        for r in self.rows:
            if r["sla"] == sla and r["slice"] == slice_id:
                return r
        raise KeyError((sla, slice_id))

    @property
    def grid(self) -> list[tuple[str, int]]:
        return [(r["sla"], r["slice"]) for r in self.rows]


METRICS = ("mean_reward", "violation_rate", "mean_prbs")


def summarise(agent_name: str, per_seed: Mapping[int, Mapping[str, Mapping[int, dict]]]) -> EvalSummary:
    """``per_seed[seed][sla_label][slice] -> metrics`` into an :class:`EvalSummary`."""
    seeds = sorted(per_seed)
    rows = []
    first = per_seed[seeds[0]]
    for sla in first:
        for s in sorted(first[sla]):
            row = {"agent": agent_name, "sla": sla, "slice": s, "seeds": seeds}
            for m in METRICS:
                vals = [per_seed[k][sla][s][m] for k in seeds]
                row[m] = float(np.mean(vals))
                row[m + "_ci"] = ci_halfwidth(vals)
                row[m + "_per_seed"] = vals
            rows.append(row)
    return EvalSummary(agent_name, rows)


def evaluate_agents(agents_by_seed: Mapping[int, Mapping[int, object]], spec: ScenarioSpec,
                    agent_name: str, episodes: Optional[int] = None) -> EvalSummary:
    n = spec.lab.eval_episodes if episodes is None else episodes
    per_seed = {}
    for seed, agents in agents_by_seed.items():
        per_seed[seed] = {}
        for point in spec.eval_grid:
            ev = evaluate(agents, spec.lab, point, n, seed)
            per_seed[seed][grid_label(point)] = {s: _summarise(ms) for s, ms in ev.items()}
    return summarise(agent_name, per_seed)


def _ratio(a: float, b: float) -> float:
    if b == 0:
        return 1.0 if a == 0 else math.inf
    return a / b


def compare(summaries: Sequence[EvalSummary], reference: Optional[str] = None) -> list[dict]:
    """Ratio table of every agent against ``reference`` (default: the first summary)."""
    if not summaries:
        raise ValueError("nothing to compare")
    ref = summaries[0] if reference is None else next(s for s in summaries if s.agent == reference)
    grid = ref.grid
    table = []
    for summ in summaries:
        if summ.grid != grid:
            raise ValueError(f"evaluation grid of {summ.agent} differs from {ref.agent}")
        for sla, s in grid:
            a, b = summ.get(sla, s), ref.get(sla, s)
            if a["seeds"] != b["seeds"]:
                raise ValueError(f"{summ.agent} and {ref.agent} were evaluated on different seeds")
            table.append({
                "agent": summ.agent, "reference": ref.agent, "sla": sla, "slice": s,
                "violation_ratio": _ratio(a["violation_rate"], b["violation_rate"]),
                "prb_ratio": _ratio(a["mean_prbs"], b["mean_prbs"]),
                "reward_ratio": _ratio(a["mean_reward"], b["mean_reward"]),
            })
    return table


# --------------------------------------------------------------------------
# CSV exports


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


def write_rows(path, rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = list(columns) if columns else (list(rows[0]) if rows else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])


def curve_series(curves: Mapping[int, Sequence[dict]], metric: str, slice_id: int,
                 key: str = "episode", sla: Optional[str] = None) -> list[dict]:
    """Seed-aggregated plot series ``(x, mean, ci_lo, ci_hi)`` for one metric."""
    by_x: dict = {}
    for seed, rows in curves.items():
        for r in rows:
            if r["slice"] != slice_id or (sla is not None and r.get("sla") != sla):
                continue
            by_x.setdefault(r[key], []).append(r[metric])
    out = []
    for x in sorted(by_x):
        vals = by_x[x]
        m, h = float(np.mean(vals)), ci_halfwidth(vals)
        out.append({"x": x, "mean": m, "ci_lo": m - h, "ci_hi": m + h})
    return out


@dataclass
class ScenarioResult:
    spec: ScenarioSpec
    kind: str
    results: dict[int, TrainResult]
    summary: EvalSummary


def run_scenario(spec: ScenarioSpec, kind: str, out_dir=None, seeds: Optional[Sequence[int]] = None,
                 eval_during_training: bool = True) -> ScenarioResult:
    """Train ``kind`` on every seed of ``spec``, evaluate greedily and export CSVs."""
    seeds = list(spec.seeds if seeds is None else seeds)
    results = {}
    for seed in seeds:
        grid = spec.eval_grid if eval_during_training else ()
        results[seed] = train(kind, spec.lab, seed, grid)
        log.info("%s/%s seed %d trained", spec.name, kind, seed)
    summary = evaluate_agents({s: r.agents for s, r in results.items()}, spec, kind)
    res = ScenarioResult(spec, kind, results, summary)
    if out_dir is not None:
        export(res, out_dir)
    return res


def export(res: ScenarioResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kind = res.kind
    curves = {s: r.curve for s, r in res.results.items()}
    for seed, r in res.results.items():
        write_rows(out / f"{kind}_seed{seed}_training.csv", r.curve,
                   ["episode", "slice", "lambda_ms", "mean_reward", "violation_rate", "mean_prbs"])
        if r.eval_curve:
            write_rows(out / f"{kind}_seed{seed}_eval_curve.csv", r.eval_curve,
                       ["episode", "sla", "slice", "mean_reward", "violation_rate", "mean_prbs"])
        for s, agent in r.agents.items():
            if hasattr(agent, "params"):
                save_agent(agent, out / f"{kind}_seed{seed}_slice{s}.ckpt")
    slices = sorted({row["slice"] for rows in curves.values() for row in rows})
    for s in slices:
        for metric in METRICS:
            write_rows(out / f"{kind}_slice{s}_{metric}_series.csv", curve_series(curves, metric, s),
                       ["x", "mean", "ci_lo", "ci_hi"])
    write_summary(out / f"{kind}_summary.csv", res.summary)


SUMMARY_COLUMNS = ["agent", "sla", "slice", "mean_reward", "mean_reward_ci", "violation_rate",
                   "violation_rate_ci", "mean_prbs", "mean_prbs_ci", "seeds"]


def write_summary(path, summary: EvalSummary) -> None:
    write_rows(path, summary.rows, SUMMARY_COLUMNS)
