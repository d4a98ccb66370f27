"""Closed-loop platoon simulation, PPO training driver and evaluation sweeps."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .controllers import IdmParams, LinearGains, compute_error_state, idm_accel, linear_policy
from .dynamics import A_MAX_HARD, A_MIN_HARD, DelayLine, SimConfig, VehicleState, advance
from .errors import NumericalAbort
from .metrics import MetricsReport, episode_report
from .rl.observation import N_PREDECESSORS, NORMALIZATION, OBS_DIM, build_observation
from .rl.policy import Policy
from .rl.ppo import Adam, Batch, PpoHyper, gae, normalize, ppo_update
from .rl.reward import RewardWeights, reward
from .safety import safety_filter
from .scenarios import CAV, LeadTrajectory, PlatoonSpec, init_equilibrium


@dataclass
class Rollout:
    """Per-CAV learning data; column ``j`` belongs to ``cav_indices[j]``."""

    cav_indices: list[int]
    obs: np.ndarray       # (T, k, OBS_DIM)
    actions: np.ndarray   # (T, k) sampled residuals (pre-clip)
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    terminal: bool


@dataclass
class EpisodeTrace:
    """Row ``t`` holds the state at step ``t`` and the commands issued from it.

    Columns are vehicles (0 is the lead). CAV-only columns hold NaN for other
    vehicles. ``pred_seen`` is the delayed predecessor position a CAV acted on.
    """

    kinds: tuple[str, ...]
    controller: str
    dt: float
    d: np.ndarray
    v: np.ndarray
    a: np.ndarray
    u: np.ndarray
    a_phy: np.ndarray
    a_rl: np.ndarray
    a_perpl: np.ndarray
    barrier: np.ndarray
    reward: np.ndarray
    pred_seen: np.ndarray
    collided: bool = False
    rollout: Rollout | None = None

    def __len__(self) -> int:
        return self.d.shape[0]

    def write_csv(self, path: str | Path) -> None:
        write_trace(path, self)


TRACE_COLUMNS = ("step", "time", "vehicle", "kind", "position", "speed", "accel", "command",
                 "a_phy", "a_rl", "a_perpl", "barrier", "reward", "collision")


def _fmt(x) -> str:
    return "" if isinstance(x, float) and math.isnan(x) else repr(float(x))


def write_trace(path: str | Path, trace: EpisodeTrace) -> None:
    """One row per (step, vehicle) in :data:`TRACE_COLUMNS` order; blanks where not applicable."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    last = len(trace) - 1
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for t in range(len(trace)):
            for n, kind in enumerate(trace.kinds):
                w.writerow([t, repr(round(t * trace.dt, 10)), n, "LEAD" if n == 0 else kind,
                            _fmt(trace.d[t, n]), _fmt(trace.v[t, n]), _fmt(trace.a[t, n]), _fmt(trace.u[t, n]),
                            _fmt(trace.a_phy[t, n]), _fmt(trace.a_rl[t, n]), _fmt(trace.a_perpl[t, n]),
                            int(trace.barrier[t, n]), _fmt(trace.reward[t, n]),
                            int(trace.collided and t == last)])


def write_speed_field(path: str | Path, trace: EpisodeTrace) -> None:
    """Rows are time steps, columns vehicles, cells speeds (heat-map input)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"v{n}" for n in range(len(trace.kinds))])
        for t in range(len(trace)):
            w.writerow([repr(round(t * trace.dt, 10))] + [repr(float(x)) for x in trace.v[t]])


def _history(state: VehicleState, lag: int, dt: float) -> list[VehicleState]:
    # constant-speed past consistent with an equilibrium start
    return [VehicleState(state.d - k * state.v * dt, state.v, state.a) for k in range(lag, 0, -1)]


def run_episode(platoon: PlatoonSpec, lead: LeadTrajectory, policy: Policy | None = None,
                cfg: SimConfig = SimConfig(), *, idm: IdmParams = IdmParams(),
                gains: LinearGains = LinearGains(), reward_weights: RewardWeights = RewardWeights(),
                rng: np.random.Generator | None = None, initial_states: Sequence[VehicleState] | None = None,
                record_rollout: bool = False) -> EpisodeTrace:
    """Simulate one platoon behind a trajectory-driven lead.

    CAVs follow ``platoon.cav_controller``: ``linear`` ignores ``policy``;
    ``perpl`` adds the policy residual (zero when ``policy`` is None); ``rl``
    zeroes the linear gains and requires a policy. With ``rng`` the residual is
    sampled, otherwise the actor mean is used.
    """
    mode = platoon.cav_controller
    if mode == "linear":
        policy = None
    elif mode == "rl":
        if policy is None:
            raise ValueError("the rl controller needs a policy")
        gains = LinearGains.zero()
    if abs(lead.dt - cfg.dt) > 1e-12:
        raise ValueError(f"trajectory dt={lead.dt} differs from simulation dt={cfg.dt}")

    n = len(platoon)
    T = len(lead)
    kinds = platoon.kinds
    cavs = platoon.cav_indices
    lag = cfg.comm_lag_steps
    dt = cfg.dt
    length = cfg.vehicle_length

    if initial_states is None:
        v0 = platoon.initial_speed if platoon.initial_speed is not None else float(lead.speeds[0])
        initial_states = init_equilibrium(platoon, cfg, idm, speed=v0)
    states = list(initial_states)
    if len(states) != n:
        raise ValueError(f"{len(states)} initial states for a {n}-vehicle platoon")
    lead_d = states[0].d
    states[0] = VehicleState(lead_d, float(lead.speeds[0]), float(lead.accels[0]))

    lines = []
    for s in states:
        line = DelayLine(lag)
        for past in _history(s, lag, dt):
            line.push(past)
        lines.append(line)

    shape = (T, n)
    nan = np.full(shape, np.nan)
    d, v, a, u_rec = np.zeros(shape), np.zeros(shape), np.zeros(shape), np.zeros(shape)
    a_phy_rec, a_rl_rec, a_perpl_rec = nan.copy(), nan.copy(), nan.copy()
    rew_rec, seen_rec = nan.copy(), nan.copy()
    barrier = np.zeros(shape, dtype=bool)

    k = len(cavs)
    if record_rollout:
        r_obs = np.zeros((T, k, OBS_DIM))
        r_act, r_logp, r_val, r_rew = (np.zeros((T, k)) for _ in range(4))

    use_policy = policy is not None and k > 0
    norm = policy.normalization if policy is not None else NORMALIZATION
    collided = False
    steps = T
    for t in range(T):
        for i, s in enumerate(states):
            d[t, i], v[t, i], a[t, i] = s.d, s.v, s.a
        delayed = [line.push_read(s) for line, s in zip(lines, states)]

        commands = [0.0] * n
        errs = []
        obs = np.zeros((k, OBS_DIM)) if use_policy or record_rollout else None
        for j, i in enumerate(cavs):
            err = compute_error_state(states[i], delayed[i - 1], cfg)
            errs.append(err)
            if obs is not None:
                preds = [delayed[i - m] for m in range(1, N_PREDECESSORS + 1) if i - m >= 0]
                obs[j] = build_observation(err, states[i], preds, norm)
        if use_policy:
            residual, sampled, logp = policy.act(obs, rng)
            if not np.all(np.isfinite(residual)):
                raise NumericalAbort(f"non-finite policy output at step {t}: {residual}")
            if record_rollout:
                r_obs[t], r_act[t], r_logp[t] = obs, sampled, logp
                r_val[t] = policy.value(obs)
        else:
            residual = np.zeros(k)

        for j, i in enumerate(cavs):
            a_phy = linear_policy(errs[j], gains)
            a_rl = float(residual[j])
            combined = a_phy + a_rl
            # actuator saturation is not a barrier intervention
            saturated = min(A_MAX_HARD, max(A_MIN_HARD, combined))
            safe, activated = safety_filter(saturated, states[i], delayed[i - 1], cfg)
            commands[i] = safe
            a_phy_rec[t, i], a_rl_rec[t, i], a_perpl_rec[t, i] = a_phy, a_rl, safe
            barrier[t, i] = activated
            seen_rec[t, i] = delayed[i - 1].d

        for i in range(1, n):
            if kinds[i] != CAV:
                pred, ego = states[i - 1], states[i]
                commands[i] = idm_accel(ego.v, pred.d - ego.d - length, ego.v - pred.v, idm)
        for i in range(1, n):
            u_rec[t, i] = commands[i]

        nxt = [None] * n
        if t + 1 < T:
            v_lead = float(lead.speeds[t + 1])
            nxt[0] = VehicleState(states[0].d + v_lead * dt, v_lead, float(lead.accels[t + 1]))
        else:
            v_lead = max(0.0, states[0].v + states[0].a * dt)
            nxt[0] = VehicleState(states[0].d + v_lead * dt, v_lead, states[0].a)
        for i in range(1, n):
            nxt[i] = advance(states[i], commands[i], cfg)
            if not (math.isfinite(nxt[i].d) and math.isfinite(nxt[i].v) and math.isfinite(nxt[i].a)):
                raise NumericalAbort(f"non-finite state for vehicle {i} at step {t}: {nxt[i]}")
        states = nxt

        for j, i in enumerate(cavs):
            true_err = compute_error_state(states[i], states[i - 1], cfg)
            r = reward(true_err, commands[i], bool(barrier[t, i]), reward_weights)
            rew_rec[t, i] = r
            if record_rollout:
                r_rew[t, j] = r

        if any(states[i - 1].d - states[i].d <= length for i in range(1, n)):
            collided = True
            steps = t + 1
            break

    def cut(x):
        return x[:steps]

    rollout = None
    if record_rollout:
        rollout = Rollout(list(cavs), cut(r_obs), cut(r_act), cut(r_logp), cut(r_val), cut(r_rew), collided)
    return EpisodeTrace(kinds, mode, dt, cut(d), cut(v), cut(a), cut(u_rec), cut(a_phy_rec), cut(a_rl_rec),
                        cut(a_perpl_rec), cut(barrier), cut(rew_rec), cut(seen_rec), collided, rollout)


# --------------------------------------------------------------------------- training

@dataclass
class TrainResult:
    policy: Policy
    optimizer: Adam | None
    curve: list[dict[str, float]] = field(default_factory=list)
    iterations: int = 0


def episode_rng(seed: int, episode: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1, episode])


def rollout_batch(traces: Sequence[EpisodeTrace], policy: Policy, h: PpoHyper) -> tuple[Batch, list[float]]:
    """Stack rollouts, compute GAE per CAV stream and normalise advantages over the batch."""
    obs, acts, logps, advs, rets, returns_per_stream = [], [], [], [], [], []
    for tr in traces:
        ro = tr.rollout
        for j in range(len(ro.cav_indices)):
            rewards, values = ro.rewards[:, j], ro.values[:, j]
            dones = np.zeros(len(rewards), dtype=bool)
            if ro.terminal:
                dones[-1] = True
                bootstrap = 0.0
            else:
                # time-limit truncation: bootstrap from the last observed state
                bootstrap = float(policy.value(ro.obs[-1, j])[0])
            adv, ret = gae(rewards, values, dones, bootstrap, h.gamma, h.gae_lambda)
            obs.append(ro.obs[:, j])
            acts.append(ro.actions[:, j])
            logps.append(ro.log_probs[:, j])
            advs.append(adv)
            rets.append(ret)
            returns_per_stream.append(float(np.sum(rewards)))
    adv = np.concatenate(advs)
    batch = Batch(np.concatenate(obs), np.concatenate(acts), np.concatenate(logps), normalize(adv),
                  np.concatenate(rets))
    return batch, returns_per_stream


def train(trajectories: Sequence[LeadTrajectory], platoon: PlatoonSpec, hyper: PpoHyper = PpoHyper(),
          iterations: int = 100, seed: int = 0, *, cfg: SimConfig = SimConfig(), idm: IdmParams = IdmParams(),
          gains: LinearGains = LinearGains(), reward_weights: RewardWeights = RewardWeights(),
          policy: Policy | None = None, optimizer: Adam | None = None, start_iteration: int = 0,
          initial_states_fn: Callable[[int, LeadTrajectory], Sequence[VehicleState] | None] | None = None,
          on_iteration: Callable[[int, Policy, Adam, dict], None] | None = None) -> TrainResult:
    """PPO on the residual (``perpl``) or the whole command (``rl``).

    Each iteration runs ``hyper.n_actors`` full episodes, visiting the
    trajectories round-robin, then one :func:`ppo_update`. Episode ``e`` samples
    from a generator seeded by ``(seed, e)``, so a run resumed from
    ``start_iteration`` with the saved policy/optimizer reproduces the
    uninterrupted run.
    """
    if not trajectories:
        raise ValueError("no training trajectories")
    if platoon.cav_controller == "linear":
        raise ValueError("nothing to train for the linear controller")
    if not platoon.cav_indices:
        raise ValueError("platoon has no CAV to train")
    if policy is None:
        policy = Policy.init(np.random.default_rng([seed, 0]))
        policy.meta = {"seed": seed, "controller": platoon.cav_controller}
    result = TrainResult(policy, optimizer, iterations=start_iteration)
    for it in range(start_iteration, start_iteration + iterations):
        traces = []
        for actor in range(hyper.n_actors):
            e = it * hyper.n_actors + actor
            lead = trajectories[e % len(trajectories)]
            init = initial_states_fn(e, lead) if initial_states_fn else None
            traces.append(run_episode(platoon, lead, result.policy, cfg, idm=idm, gains=gains,
                                      reward_weights=reward_weights, rng=episode_rng(seed, e),
                                      initial_states=init, record_rollout=True))
        batch, returns = rollout_batch(traces, result.policy, hyper)
        new_policy, opt, diag = ppo_update(batch, result.policy, hyper, np.random.default_rng([seed, 2, it]),
                                           result.optimizer)
        row = {"iteration": it + 1, "mean_reward": float(np.mean(returns)),
               "value_loss": diag["value_loss"], "clip_fraction": diag["clip_fraction"]}
        result.policy, result.optimizer = new_policy, opt
        result.policy.meta = {**result.policy.meta, "iterations": it + 1}
        result.curve.append(row)
        result.iterations = it + 1
        if on_iteration is not None:
            on_iteration(it + 1, result.policy, opt, row)
    return result


# --------------------------------------------------------------------------- evaluation

def evaluate(trajectories: Sequence[LeadTrajectory], platoon: PlatoonSpec, policy: Policy | None = None,
             cfg: SimConfig = SimConfig(), *, idm: IdmParams = IdmParams(), gains: LinearGains = LinearGains(),
             alpha: float = 1.0, trace_dir: str | Path | None = None) -> list[MetricsReport]:
    """Deterministic (actor-mean) episodes over every trajectory, one report each."""
    reports = []
    for idx, lead in enumerate(trajectories):
        trace = run_episode(platoon, lead, policy, cfg, idm=idm, gains=gains)
        if trace_dir is not None:
            write_trace(Path(trace_dir) / f"trace_{idx:03d}.csv", trace)
        reports.append(episode_report(trace, cfg, alpha))
    return reports


def summarize(reports: Sequence[MetricsReport], group: str = "cav") -> dict[str, float | None]:
    """Average each metric of ``group`` over episodes; barrier % is time-weighted equally per episode."""
    out: dict[str, float | None] = {}
    for key in MetricsReport.KEYS:
        vals = [r.aggregate[group][key] for r in reports if r.aggregate[group][key] is not None]
        out[key] = float(np.mean(vals)) if vals else None
    out["collisions"] = sum(1 for r in reports if r.collided)
    out["episodes"] = len(reports)
    return out
