"""Acceptance suite: nine end-to-end checks, each printing one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` or directly with
``python tests/test_acceptance.py``. Set ``ADVRAND_ACCEPTANCE_DIR`` to keep
the run directories and curve CSVs of the two training comparisons.
"""

import math
import os
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from advrand import adversary as A
from advrand import harness
from advrand import learner as L
from advrand import policy as P
from advrand import renderer as R
from advrand import theory as T
from advrand.seeding import derive_seed, make_rng

SEEDS = (0, 1, 2, 3, 4)
RESULTS = {}


@pytest.fixture
def say(capsys):
    """Print straight to the terminal, past pytest's output capture."""
    def emit(text: str) -> None:
        with capsys.disabled():
            print(text, flush=True)
    return emit


@pytest.fixture
def report(say):
    def emit(n: int, ok: bool, detail: str) -> None:
        RESULTS[n] = ok
        say(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    return emit


def out_dir(name: str) -> Path:
    root = os.environ.get("ADVRAND_ACCEPTANCE_DIR")
    base = Path(root) if root else Path(tempfile.mkdtemp(prefix="advrand-acc-"))
    path = base / name
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# 1. gradient check


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    # floor keeps parameters with near-zero gradient from dividing roundoff by roundoff
    return float((np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-6)).max())


def test_c1_gradient_correctness(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    eps = 1e-4
    for trial in range(20):
        kind = "cross_entropy_softmax" if trial % 2 == 0 else "per_cell_cross_entropy"
        n_in, hidden = int(rng.integers(3, 9)), [int(v) for v in rng.integers(3, 8, size=int(rng.integers(1, 3)))]
        if kind == "cross_entropy_softmax":
            k = int(rng.integers(2, 7))
            sizes, y = [n_in, *hidden, k], rng.integers(0, k, size=4)
        else:
            cells, k = int(rng.integers(2, 5)), int(rng.integers(2, 4))
            sizes, y = [n_in, *hidden, cells * k], rng.integers(0, k, size=(4, cells))
        h = L.init_mlp(sizes, rng)
        for layer in h.layers:
            layer.bias[:] = 0.1 * rng.standard_normal(layer.bias.shape)
        x = rng.standard_normal((4, n_in))
        analytic = L.backward(h, x, y, kind)
        for layer, (gw, gb) in zip(h.layers, analytic):
            for arr, g in ((layer.weight, gw), (layer.bias, gb)):
                num = np.zeros_like(arr)
                for idx in np.ndindex(arr.shape):
                    old = arr[idx]
                    arr[idx] = old + eps
                    up = L.loss(kind, L.forward(h, x)[0], y)
                    arr[idx] = old - eps
                    dn = L.loss(kind, L.forward(h, x)[0], y)
                    arr[idx] = old
                    num[idx] = (up - dn) / (2 * eps)
                worst = max(worst, _rel_err(g, num))
    dt = time.perf_counter() - t0
    ok = worst < 1e-4 and dt < 10
    report(1, ok, f"max rel err {worst:.2e} over 20 nets (< 1e-4), {dt:.1f}s (< 10s)")
    assert ok


# ---------------------------------------------------------------------------
# 2, 3. REINFORCE estimator on a 3-arm bandit

BANDIT_LOGITS = np.array([0.4, -0.3, 0.1])
BANDIT_REWARDS = np.array([1.0, 2.0, 4.0])
BANDIT_M = 4


def _bandit_estimates(n_batches: int, seed: int, baseline_mode: str) -> np.ndarray:
    pi = P.PolicyState(BANDIT_LOGITS.copy())
    rng = np.random.default_rng(seed)
    out = np.empty((n_batches, 3))
    for i in range(n_batches):
        draws = P.sample(pi, rng, BANDIT_M)
        r = BANDIT_REWARDS[[d.cell for d in draws]]
        b = float(r.mean()) if baseline_mode == "batch_mean" else 0.0
        out[i] = P.reinforce_grad(pi, draws, r, baseline=b)
    return out


def test_c2_reinforce_unbiased(report):
    t0 = time.perf_counter()
    est = _bandit_estimates(100_000, 7, "zero")
    exact = P.expected_gradient(P.PolicyState(BANDIT_LOGITS), BANDIT_REWARDS, 0.0)
    se = est.std(axis=0, ddof=1) / math.sqrt(len(est))
    z = np.abs(est.mean(axis=0) - exact) / se
    two_arm = P.expected_gradient(P.uniform_policy(2), [1.0, 0.0], 0.0)
    dt = time.perf_counter() - t0
    ok = bool(np.all(z < 3)) and two_arm.tolist() == [0.25, -0.25] and dt < 30
    report(2, ok, f"|mean - exact|/SE = {np.round(z, 2).tolist()} (< 3); 2-arm = {two_arm.tolist()}; {dt:.1f}s (< 30s)")
    assert ok


def test_c3_baseline_variance_reduction(report):
    var0 = _bandit_estimates(10_000, 11, "zero").var(axis=0, ddof=1)
    varb = _bandit_estimates(10_000, 11, "batch_mean").var(axis=0, ddof=1)
    pi = P.PolicyState(BANDIT_LOGITS)
    g0 = P.expected_gradient(pi, BANDIT_REWARDS, 0.0)
    gb = P.expected_gradient(pi, BANDIT_REWARDS, float(pi.probs() @ BANDIT_REWARDS))
    diff = float(np.abs(g0 - gb).max())
    ok = bool(np.all(varb < var0)) and diff < 1e-12
    report(3, ok, f"var b=0 {np.round(var0, 4).tolist()} vs b=batch mean {np.round(varb, 4).tolist()}; "
                  f"exact gradients differ by {diff:.1e}")
    assert ok


# ---------------------------------------------------------------------------
# 4. frozen learner, adversarial concentration


def _pretrain_on_half(space, half, seed, steps=150):
    g = R.ShapeColorSimulator(space)
    rng = make_rng(seed, "pretrain")
    h = L.init_mlp([space.n_pixels, 128, len(space.palette)], make_rng(seed, "init", "learner"))
    for it in range(steps):
        cells = rng.choice(half, size=32)
        x, y = g.render_batch(list(cells), [derive_seed(seed, "pretrain", it, i) for i in range(32)])
        h = L.sgd_step(h, L.backward(h, x, y, "cross_entropy_softmax"), 0.05)
    cells = list(np.repeat(half, 2))
    x, y = g.render_batch(cells, [derive_seed(seed, "pretrain-eval", i) for i in range(len(cells))])
    return h, L.evaluate(h, x, y, "cross_entropy_softmax").mean_loss


def test_c4_adversarial_concentration(report):
    t0 = time.perf_counter()
    base = harness.load_config("taskA-vadra")
    space = base.render_space()
    # designated half: the three colours the learner is shown; the rest stay high-loss
    half = [c for c in range(space.cardinality) if R.cell_to_theta(space, c)[2] < 3]
    hard = np.setdiff1d(np.arange(space.cardinality), half)
    masses, losses = [], []
    for seed in SEEDS:
        h, pre_loss = _pretrain_on_half(space, half, seed)
        cfg = replace(base.loop_config(), iterations=200, learner_lr=0.0, seed=seed)
        g = R.ShapeColorSimulator(space)
        h_after, pi, _ = A.run_vadra(cfg, g, h, harness.build_policy(base, space))
        assert h_after is h
        masses.append(float(pi.probs()[hard].sum()))
        losses.append(pre_loss)
    dt = time.perf_counter() - t0
    ok = all(m > 0.8 for m in masses) and dt < 120
    report(4, ok, f"high-loss mass {np.round(masses, 3).tolist()} (> 0.8 in 5/5), "
                  f"pretrain loss {max(losses):.3f}, policy_lr {base.policy_lr}, {dt:.0f}s (< 120s)")
    assert ok


# ---------------------------------------------------------------------------
# 5. DR vs VADRA on Task A, equal budgets


def _run_presets(names, seeds, root):
    dirs = {}
    for name in names:
        for seed in seeds:
            out = root / f"{name}-s{seed}"
            harness.run_experiment(harness.load_config(name, seed=seed, out=str(out)))
            dirs[(name, seed)] = out
    return dirs


def test_c5_vadra_vs_dr(report, say):
    t0 = time.perf_counter()
    root = out_dir("c5")
    dirs = _run_presets(["taskA-dr", "taskA-vadra"], SEEDS, root)
    rows = harness.compare(list(dirs.values()), root / "curves.csv")
    dr_cfg, va_cfg = harness.load_config("taskA-dr"), harness.load_config("taskA-vadra")
    assert dr_cfg.budget == va_cfg.budget
    last = rows[-1]
    step = max(1, len(rows) // 10)
    curve = "; ".join(f"{r['iter']}: {r['dr_mean']:.3f}/{r['vadra_mean']:.3f}" for r in rows[step - 1::step])
    say(f"\n  per-iteration mean target acc (dr/vadra): {curve}")
    say(f"  curves written to {root / 'curves.csv'}")
    dt = time.perf_counter() - t0
    ok = last["vadra_mean"] >= last["dr_mean"] and last["dr_n"] == last["vadra_n"] == len(SEEDS) and dt < 900
    report(5, ok, f"final mean target acc VADRA {last['vadra_mean']:.4f} vs DR {last['dr_mean']:.4f} "
                  f"(need >=), {len(SEEDS)} paired seeds, budget {va_cfg.budget}/iter, kappa {va_cfg.hardness}, {dt:.0f}s (< 900s)")
    assert ok


# ---------------------------------------------------------------------------
# 6. DA shape discovery


def test_c6_da_prefers_target_shape(report):
    t0 = time.perf_counter()
    root = out_dir("c6")
    dirs = _run_presets(["taskA-vadra_da"], SEEDS, root)
    finals = []
    for seed in SEEDS:
        pi = P.load_policy(dirs[("taskA-vadra_da", seed)] / "policy.npz")
        finals.append(float(P.marginal(pi, 0)[R.SHAPES.index("circle")]))
    wins = sum(p > 1 / 3 for p in finals)
    dt = time.perf_counter() - t0
    ok = wins >= 4
    report(6, ok, f"final P(shape=circle) {np.round(finals, 3).tolist()}, {wins}/5 above 1/3 (need >= 4), {dt:.0f}s")
    assert ok


# ---------------------------------------------------------------------------
# 7. bound arithmetic


def test_c7_bound_arithmetic(report):
    rng = np.random.default_rng(77)
    one = T.BoundInputs(d_vc=10, m=1000, delta=0.1, alpha=[1.0], beta=[1.0])
    n1_exact = T.multi_source_bound(one).total == T.single_source_bound(one, 0)
    wf_err = max(abs(T.multi_source_bound(T.BoundInputs.uniform(n, d_vc=3, m=50, delta=0.1)).weight_factor - 1.0)
                 for n in range(1, 40))
    failures = 0
    for _ in range(1000):
        n = int(rng.integers(1, 6))
        inp = T.BoundInputs(d_vc=int(rng.integers(1, 30)), m=float(rng.integers(2, 10**5)), delta=float(rng.uniform(0.01, 0.9)),
                            alpha=rng.dirichlet(np.ones(n)), beta=rng.dirichlet(np.ones(n)),
                            lam=rng.uniform(0, 0.5, n), div=rng.uniform(0, 2, n), eps_star=float(rng.uniform(0, 0.2)))
        b = T.multi_source_bound(inp).total
        k = int(rng.integers(n))
        bump = float(rng.uniform(0.01, 1.0))
        lam, div = list(inp.lam), list(inp.div)
        lam[k] += bump
        div[k] += bump
        checks = [
            T.multi_source_bound(replace(inp, m=inp.m * (1 + bump))).total <= b,
            T.multi_source_bound(replace(inp, delta=min(inp.delta + bump / 10, 0.999))).total <= b,
            T.multi_source_bound(replace(inp, lam=lam)).total >= b,
            T.multi_source_bound(replace(inp, div=div)).total >= b,
            T.multi_source_bound(replace(inp, eps_star=inp.eps_star + bump)).total >= b,
        ]
        uni = T.BoundInputs.uniform(n, d_vc=inp.d_vc, m=inp.m, delta=inp.delta, lam=inp.lam, div=inp.div)
        s = T.source_distances(uni)
        checks += [T.uniform_multi_bound(uni) <= T.single_source_bound(uni, j) for j in range(n) if np.mean(s) <= s[j]]
        failures += not all(checks)
    ok = n1_exact and wf_err < 1e-12 and failures == 0
    report(7, ok, f"N=1 reduction exact: {n1_exact}; uniform weight factor err {wf_err:.1e}; "
                  f"{failures} failures over 1000 randomized monotonicity/ensemble inputs")
    assert ok


# ---------------------------------------------------------------------------
# 8. renderer invariants


def test_c8_renderer_invariants(report):
    rng = np.random.default_rng(8)
    range_ok = det_ok = True
    for kappa in (0.0, 0.15, 0.35, 1.0, 3.0):
        g = R.ShapeColorSimulator(R.RenderSpace.shape_color(hardness=kappa))
        for _ in range(40):
            cell, seed = int(rng.integers(252)), int(rng.integers(2**63))
            a, b = g.render(cell, seed), g.render(cell, seed)
            range_ok &= bool(a.image.min() >= 0.0 and a.image.max() <= 1.0)
            det_ok &= a.image.tobytes() == b.image.tobytes()
    clean = R.RenderSpace.shape_color(hardness=0.0, pixel_noise=0.0, light_jitter=0.0, position_jitter=0.0, size_jitter=0.0)
    gc = R.ShapeColorSimulator(clean)
    decoded = sum(R.decode_dominant_color(gc.render(c, c).image, clean.palette) == gc.render(c, c).label for c in range(252))
    gspace = R.RenderSpace.grid_spawn()
    gg = R.GridSpawnSimulator(gspace)
    pi = P.uniform_policy(gspace.cardinality)
    bij = 0
    for i in range(1000):
        draw = P.sample_scene(pi, rng, int(rng.integers(2, 13)), gspace.n_classes)
        s = gg.render(draw.cells, i)
        placements = frozenset(R.cell_to_theta(gspace, c) for c in draw.cells)
        range_ok &= bool(s.image.min() >= 0.0 and s.image.max() <= 1.0)
        bij += R.decode_occupancy(s.label) == placements and len(placements) == len(draw.cells)
    ok = range_ok and det_ok and decoded == 252 and bij == 1000
    report(8, ok, f"pixel range ok: {range_ok}; bit-identical re-render: {det_ok}; "
                  f"kappa=0 decodable {decoded}/252; occupancy bijection {bij}/1000")
    assert ok


# ---------------------------------------------------------------------------
# 9. reproducibility and budget parity


def test_c9_reproducibility_and_parity(report):
    root = out_dir("c9")
    same = []
    for name in sorted(harness.PRESETS):
        blobs = []
        for rep in ("a", "b"):
            cfg = harness.load_config(name, seed=3, out=str(root / f"{name}-{rep}"), iterations=4)
            harness.run_experiment(cfg)
            blobs.append((root / f"{name}-{rep}" / "metrics.csv").read_bytes())
        same.append(blobs[0] == blobs[1])
    dr_cfg, va_cfg = harness.load_config("taskA-dr"), harness.load_config("taskA-vadra")
    space = dr_cfg.render_space()
    g_dr, g_va = R.ShapeColorSimulator(space), R.ShapeColorSimulator(space)
    h = harness.build_learner(dr_cfg, space)
    A.run_dr(replace(dr_cfg.loop_config(), iterations=5), g_dr, h.copy())
    A.run_vadra(replace(va_cfg.loop_config(), iterations=5), g_va, h.copy(), harness.build_policy(va_cfg, space))
    parity = g_dr.render_calls == g_va.render_calls == 5 * va_cfg.budget
    ok = all(same) and parity
    report(9, ok, f"byte-identical metrics for {sum(same)}/{len(same)} presets; "
                  f"render calls DR {g_dr.render_calls} vs VADRA {g_va.render_calls} over 5 iterations")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
