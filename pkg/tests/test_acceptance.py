"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from perpl import cli
from perpl.config import build_config, split_trajectories
from perpl.engine import evaluate, run_episode, summarize, train
from perpl.rl.policy import Policy
from perpl.scenarios import constant_trajectory, mixed_platoon

TESTS = Path(__file__).parent


def verdict(capsys, number: int, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def run_suite(selection: list[str]) -> tuple[bool, float, str]:
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *selection],
                          cwd=TESTS.parent, capture_output=True, text=True)
    elapsed = time.perf_counter() - start
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr.strip()[-200:]
    return proc.returncode == 0, elapsed, tail


def test_criterion_1_numerical_core(capsys):
    ok, elapsed, tail = run_suite([
        "tests/test_rl.py::test_gradients_match_finite_differences",
        "tests/test_rl.py::test_full_size_gradient_matches_finite_differences",
        "tests/test_rl.py::test_gae_matches_direct_summation",
        "tests/test_rl.py::test_logprob_matches_density",
        "tests/test_dynamics.py::test_actuator_contraction",
        "tests/test_dynamics.py::test_delay_matches_reference_queue",
    ])
    verdict(capsys, 1, ok and elapsed < 60.0, f"{tail}; {elapsed:.1f} s of 60 s")


def test_criterion_2_barrier(capsys):
    ok, elapsed, tail = run_suite([
        "tests/test_safety.py::test_projection_is_clamp_and_optimal",
        "tests/test_safety.py::test_interval_matches_grid_scan",
        "tests/test_safety.py::test_one_step_headway_guarantee",
    ])
    verdict(capsys, 2, ok and elapsed < 60.0, f"{tail}; {elapsed:.1f} s of 60 s")


def test_criterion_3_equilibrium_fixed_point(capsys):
    cfg = build_config()
    worst, activations, parts = 0.0, 0, []
    for controller, policy in (("linear", None), ("perpl", Policy.init(np.random.default_rng(0)))):
        spec = mixed_platoon(controller)
        trace = run_episode(spec, constant_trajectory(15.0), policy, cfg.sim, idm=cfg.idm, gains=cfg.gains)
        cav = spec.cav_indices
        delta_d = trace.pred_seen[:, cav] - trace.d[:, cav] - cfg.sim.d0 - cfg.sim.h_d * trace.v[:, cav]
        err = float(np.max(np.abs(delta_d)))
        worst = max(worst, err)
        activations += int(trace.barrier.sum())
        parts.append(f"{controller} max|delta_d|={err:.2e}")
    ok = len(trace) == 500 and worst < 1e-3 and activations == 0
    verdict(capsys, 3, ok, f"{', '.join(parts)}, activations={activations}")


@pytest.fixture(scope="module")
def trained():
    """Default configuration: PERPL and pure RL trained 200 iterations on the 20 mild trajectories."""
    cfg = build_config()
    train_set = split_trajectories(cfg, "train")
    start = time.process_time()
    policies = {None: None}
    for controller in ("perpl", "rl"):
        result = train(train_set, cfg.platoon(controller), cfg.ppo, 200, cfg.seed, cfg=cfg.sim, idm=cfg.idm,
                       gains=cfg.gains, reward_weights=cfg.reward)
        policies[controller] = result.policy
    cpu = time.process_time() - start

    def scores(split):
        trajs = split_trajectories(cfg, split)
        out = {}
        for controller in ("linear", "perpl", "rl"):
            reports = evaluate(trajs, cfg.platoon(controller), policies.get(controller), cfg.sim,
                               idm=cfg.idm, gains=cfg.gains, alpha=cfg.alpha)
            out[controller] = summarize(reports, "cav")
        return out

    return cpu, scores


def describe(s):
    return ", ".join(f"{c} rmse={s[c]['headway_rmse']:.4f} barrier={s[c]['barrier_activation_pct']:.2f}%"
                     for c in ("perpl", "linear", "rl"))


def test_criterion_4_extrapolation_ordering(capsys, trained):
    cpu, scores = trained
    s = scores("extrapolation")
    rmse = {c: s[c]["headway_rmse"] for c in s}
    barrier = {c: s[c]["barrier_activation_pct"] for c in s}
    checks = {
        "perpl<linear": rmse["perpl"] < rmse["linear"],
        "linear<rl": rmse["linear"] < rmse["rl"],
        "rl barrier>0": barrier["rl"] > 0.0,
        "linear,perpl barrier=0": barrier["linear"] == 0.0 and barrier["perpl"] == 0.0,
        "perpl margin>=10%": rmse["perpl"] <= 0.9 * rmse["linear"],
        "train cpu<=600s": cpu <= 600.0,
    }
    failed = [k for k, v in checks.items() if not v]
    detail = f"{describe(s)}; train cpu {cpu:.0f} s" + (f"; failed: {', '.join(failed)}" if failed else "")
    verdict(capsys, 4, not failed, detail)


def test_criterion_5_mild_split_competence(capsys, trained):
    _, scores = trained
    s = scores("test")
    rmse = {c: s[c]["headway_rmse"] for c in s}
    ok = all(rmse[c] <= 0.95 * rmse["linear"] for c in ("perpl", "rl"))
    verdict(capsys, 5, ok, describe(s))


def test_criterion_6_penetration_trend(capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    start = time.perf_counter()
    code = cli.main(["sweep", "--rates", "0,0.5,1", "--followers", "40", "--seeds", "0,1,2", "--out", "sweep"])
    elapsed = time.perf_counter() - start
    rows = [line.split(",") for line in (tmp_path / "sweep/sweep.csv").read_text().splitlines()[1:]]
    damping = [float(r[2]) for r in rows]
    ok = code == 0 and damping[0] > damping[1] > damping[2] and elapsed < 300.0
    verdict(capsys, 6, ok, "damping " + " > ".join(f"{d:.4f}" for d in damping) + f"; {elapsed:.1f} s of 300 s")


def test_criterion_7_determinism(capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    for run in ("a", "b"):
        assert cli.main(["train", "--controller", "perpl", "--iterations", "50", "--seed", "3",
                         "--out", f"train_{run}"]) == 0
        assert cli.main(["evaluate", "--split", "all", "--controller", "perpl", "--seed", "3",
                         "--policy", f"train_{run}/policy.json", "--out", f"eval_{run}",
                         "--set", "data.test=20", "--set", "data.extrapolation=20"]) == 0
    compared, differing = 0, []
    for kind in ("train", "eval"):
        files_a = sorted(p.relative_to(tmp_path / f"{kind}_a") for p in (tmp_path / f"{kind}_a").rglob("*"))
        files_b = sorted(p.relative_to(tmp_path / f"{kind}_b") for p in (tmp_path / f"{kind}_b").rglob("*"))
        if files_a != files_b:
            differing.append(f"{kind}: file lists differ")
            continue
        for rel in files_a:
            a, b = tmp_path / f"{kind}_a" / rel, tmp_path / f"{kind}_b" / rel
            if a.is_file():
                compared += 1
                if a.read_bytes() != b.read_bytes():
                    differing.append(f"{kind}/{rel}")
    # evaluation has to run the policy file that training produced, not the zero policy
    trained_differs = bool(np.any(Policy.load(tmp_path / "train_a/policy.json").actor.w2 != 0.0))
    ok = not differing and compared > 0 and trained_differs
    verdict(capsys, 7, ok, f"{compared} files byte-identical" if ok else f"differ: {differing}")
