"""Independent reference computations shared by the unit and acceptance tests."""

import math

import numpy as np
from scipy.stats import chi2, chisquare

from slicelab.agents import OfflineIndex, PPOAgent, Rollout, sample_offline_transition
from slicelab.core import Observation, PpoConfig, SimConfig, SliceConfig, Transition
from slicelab.ransim import RanSimulator
from slicelab.rlcore import DenseNet


def conformance_oracle(latencies, lam):
    if len(latencies) == 0:
        return 1.0
    hits = 0
    for d in latencies:
        if d < lam:
            hits += 1
    return hits / len(latencies)


def reward_oracle(phi_sla, phi_meas, a, C, k=20.0, mode="corrected"):
    sig = 1.0 / (1.0 + math.exp(k * (phi_sla - phi_meas)))
    if mode == "corrected":
        paid = phi_meas >= phi_sla
    else:
        paid = phi_meas <= phi_sla
    return sig + ((C - a) / C if paid else 0.0)


# -- gradient check ---------------------------------------------------------


def random_net(rng):
    depth = int(rng.integers(1, 4))
    sizes = [int(rng.integers(1, 6)) for _ in range(depth + 1)]
    acts = [str(rng.choice(["tanh", "relu", "identity"])) for _ in range(depth - 1)]
    acts.append(str(rng.choice(["identity", "softmax", "tanh"])))
    if acts[-1] == "softmax" and sizes[-1] == 1:
        sizes[-1] = 3
    return DenseNet(sizes, acts, rng=rng, init_scale=1.0)


def max_fd_error(net, x, g, eps=1e-5):
    """Largest relative gap between backprop and central differences."""
    analytic = DenseNet.flatten_grads(net.backward(x, g))
    flat = net.get_flat()
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[i] += eps
        dn[i] -= eps
        net.set_flat(up)
        f_up = float(np.sum(g * net(x)))
        net.set_flat(dn)
        f_dn = float(np.sum(g * net(x)))
        numeric[i] = (f_up - f_dn) / (2 * eps)
    net.set_flat(flat)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / scale))


def gradient_check_errors(n_nets=20, seed=0):
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(n_nets):
        net = random_net(rng)
        x = rng.normal(size=(3, net.input_dim))
        g = rng.normal(size=(3, net.output_dim))
        errors.append(max_fd_error(net, x, g))
    return errors


# -- two-armed bandit -------------------------------------------------------


def ppo_bandit(seed, updates=200, batch=16):
    """Train PPO on arms paying 0 and 1; returns P(arm 1)."""
    agent = PPOAgent(2, PpoConfig(), np.random.default_rng(seed), obs_dim=1)
    x = np.zeros(1)
    for _ in range(updates):
        ro = Rollout()
        for _ in range(batch):
            a, logp, v = agent.sample(x)
            ro.add(x, a, float(a == 1), v, logp, 0.0, done=True, end=True)
        agent.update(ro)
    logits = agent.actor(x)
    return float(np.exp(logits[1] - np.logaddexp.reduce(logits)))


# -- deterministic 2-state chain -------------------------------------------

CHAIN_NEXT = np.array([[0, 1], [0, 1]])
CHAIN_REWARD = np.array([[0.0, 1.0], [2.0, 0.5]])


def chain_q_star(gamma, iters=5000):
    q = np.zeros((2, 2))
    for _ in range(iters):
        q = CHAIN_REWARD + gamma * q[CHAIN_NEXT].max(axis=2)
    return q


# -- offline sampler --------------------------------------------------------


def obs_at(tb, phi=1.0, lam=60.0):
    return Observation(float(tb), 1.0, 1.0, 5.0, 5.0, 5.0, 0.9, phi, lam)


def synthetic_dataset(n_rows, rng, n_states=4, n_actions=3):
    """Rows over a handful of states so every (bucket, action) group has many members."""
    out = []
    for i in range(n_rows):
        s = int(rng.integers(n_states))
        a = int(rng.integers(1, n_actions + 1))
        nxt = obs_at(rng.integers(n_states), phi=float(rng.random()))
        out.append(Transition(obs_at(s), a, float(rng.normal()), nxt, episode=i, epoch=0))
    return out


def offline_chi_square(n_rows=1000, draws_per_row=30, seed=0):
    """p-value of sampled row frequencies against the uniform within-group law."""
    rng = np.random.default_rng(seed)
    data = synthetic_dataset(n_rows, rng)
    index = OfflineIndex(data)
    groups = {}
    for i, t in enumerate(data):
        groups.setdefault((index.bucket(t.state.as_array()), t.action), []).append(i)
    stat, dof = 0.0, 0
    for (_, action), members in groups.items():
        state = data[members[0]].state
        draws = len(members) * draws_per_row
        key_to_row = {(data[i].reward, data[i].next_state): j for j, i in enumerate(members)}
        counts = np.zeros(len(members))
        for _ in range(draws):
            t = sample_offline_transition(index, state, action, rng)
            counts[key_to_row[(t.reward, t.next_state)]] += 1
        res = chisquare(counts)
        stat += res.statistic
        dof += len(members) - 1
    return float(chi2.sf(stat, dof))


# -- simulator invariants ---------------------------------------------------


def _partial_progress(sim):
    return sum(head[2] - head[1] for u in sim.ues for head in list(u.queue)[:1])


def check_bit_conservation(seed, n_ues, plan, sigma, epoch_ms=50):
    """Generated bits equal served plus queued bits after every epoch, exactly."""
    cfg = SimConfig(sigma_eta=sigma, slices=[SliceConfig(n_ues=n_ues), SliceConfig(n_ues=1)])
    sim = RanSimulator(cfg, seed=seed)
    for a in plan:
        reports = sim.step_epoch({0: a}, epoch_len_ms=epoch_ms)
        for s, rep in reports.items():
            if rep.bits_delivered != sum(p.size_bits for p in rep.delivered):
                return False
            if sim.generated_bits[s] != sim.served_bits[s] + sim.backlog_bits(s):
                return False
        if sum(sim.served_bits) - sum(sim.delivered_bits) != _partial_progress(sim):
            return False
    return True


def check_latency_monotone(seed, n_ues, plan, extra, epoch_ms=50):
    """Every packet delivered under ``plan`` leaves no later under ``plan + extra``."""
    cfg = SimConfig(sigma_eta=0.1, slices=[SliceConfig(n_ues=n_ues)])
    low, high = RanSimulator(cfg, seed=seed), RanSimulator(cfg, seed=seed)
    lat_low, lat_high = {}, {}
    for a, e in zip(plan, extra):
        for p in low.step_epoch({0: a}, epoch_len_ms=epoch_ms)[0].delivered:
            lat_low[(p.ue, p.arrival_us)] = p.latency_ms
        for p in high.step_epoch({0: a + e}, epoch_len_ms=epoch_ms)[0].delivered:
            lat_high[(p.ue, p.arrival_us)] = p.latency_ms
    return all(key in lat_high and lat_high[key] <= lat for key, lat in lat_low.items())
