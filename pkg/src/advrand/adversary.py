"""Training loops: uniform domain randomization, the adversarial policy loop,
and its variant with a domain classifier on unlabelled target images.

Random streams are keyed off ``cfg.seed``:

* ``("theta", "train")``  parameters rendered for the learner
* ``("theta", "policy")`` parameters rendered for policy rewards
* ``("render", phase, it, i)`` per-sample noise seeds
* ``("batches",)``  minibatch shuffling
* ``("domain",)``   target-pool batches and domain-classifier shuffling

DR draws its training samples from the same stream the adversarial loop uses
for its learner batch, so a uniform, frozen policy reproduces DR exactly.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import learner as L
from . import policy as P
from .errors import ConfigError, InvalidParameterError
from .renderer import GridSpawnSimulator, ShapeColorSimulator, cell_to_theta
from .seeding import derive_seed, make_rng

REWARD_SIGNS = ("loss_as_reward", "paper_literal")
LR_SCHEDULES = ("constant", "linear")
METRICS_COLUMNS = ("iter", "target_acc", "target_loss", "source_loss", "mean_reward", "entropy", "seed")
D_EPS = 1e-6


@dataclass
class DrConfig:
    m: int = 48
    iterations: int = 100
    learner_lr: float = 0.05
    lr_schedule: str = "constant"
    epochs: int = 1
    batch_size: int = 16
    seed: int = 0

    def validate(self) -> None:
        _check_common(self)
        if self.m < 0:
            raise ConfigError("m must be >= 0")


@dataclass
class VadraConfig:
    m1: int = 40
    m2: int = 8
    iterations: int = 100
    learner_lr: float = 0.05
    lr_schedule: str = "constant"
    policy_lr: float = 1.0
    entropy_coef: float = 0.0
    reward_sign: str = "loss_as_reward"
    w1: float = 1.0
    w2: float = 0.1
    w3: float = 1.0
    w4: float = 0.1
    domain_lr: float = 0.5
    domain_epochs: int = 5
    epochs: int = 1
    batch_size: int = 16
    seed: int = 0

    def validate(self) -> None:
        _check_common(self)
        if self.m1 < 0 or self.m2 < 0:
            raise ConfigError("m1 and m2 must be >= 0")
        if self.policy_lr < 0 or self.domain_lr < 0:
            raise ConfigError("learning rates must be >= 0")
        if self.domain_epochs < 1:
            raise ConfigError("domain_epochs must be >= 1")
        if self.reward_sign not in REWARD_SIGNS:
            raise ConfigError(f"reward_sign must be one of {REWARD_SIGNS}")
        if min(self.w1, self.w2, self.w3, self.w4) < 0:
            raise ConfigError("DA weights must be >= 0")


def _check_common(cfg) -> None:
    if cfg.iterations < 0:
        raise ConfigError("iterations must be >= 0")
    if cfg.learner_lr < 0:
        raise ConfigError("learner_lr must be >= 0")
    if cfg.lr_schedule not in LR_SCHEDULES:
        raise ConfigError(f"lr_schedule must be one of {LR_SCHEDULES}")
    if cfg.epochs < 1 or cfg.batch_size < 1:
        raise ConfigError("epochs and batch_size must be >= 1")


@dataclass
class RunMetrics:
    seed: int
    records: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records], dtype=np.float64)

    def write_csv(self, path) -> None:
        """Fixed column order; floats are written with ``repr`` for exact round trips."""
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(METRICS_COLUMNS)
            for r in self.records:
                wr.writerow([r["iter"]] + [repr(float(r[c])) for c in METRICS_COLUMNS[1:-1]] + [r["seed"]])


@dataclass
class TargetData:
    """Labelled held-out target set; only its images may enter training."""

    x: np.ndarray
    y: np.ndarray


# ---------------------------------------------------------------------------
# helpers shared by the loops


def loss_kind(g) -> str:
    return "per_cell_cross_entropy" if isinstance(g, GridSpawnSimulator) else "cross_entropy_softmax"


def draw_thetas(g, pi: P.PolicyState, rng: np.random.Generator, m: int) -> list[P.ThetaDraw]:
    """``m`` rendering draws from ``pi``: single cells, or whole scenes for grids."""
    if m == 0:
        return []
    if isinstance(g, GridSpawnSimulator):
        sp = g.space
        counts = rng.integers(sp.min_objects, sp.max_objects + 1, size=m)
        return [P.sample_scene(pi, rng, int(n), sp.n_classes) for n in counts]
    return P.sample(pi, rng, m)


def render_draws(g, draws: Sequence[P.ThetaDraw], seed: int, phase: str, it: int) -> tuple[np.ndarray, np.ndarray]:
    seeds = [derive_seed(seed, "render", phase, it, i) for i in range(len(draws))]
    if isinstance(g, GridSpawnSimulator):
        return g.render_batch([d.cells for d in draws], seeds)
    return g.render_batch([d.cell for d in draws], seeds)


def _lr_at(cfg, it: int) -> float:
    if cfg.lr_schedule == "linear" and cfg.iterations > 0:
        return cfg.learner_lr * (1.0 - it / cfg.iterations)
    return cfg.learner_lr


def train_learner(
    h: L.LearnerState,
    x: np.ndarray,
    y: np.ndarray,
    kind: str,
    lr: float,
    epochs: int,
    batch_size: int,
    rng: np.random.Generator,
    loss_weight: float = 1.0,
    feature_grad: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[L.LearnerState, float]:
    """Minibatch SGD on ``loss_weight * d`` plus an optional feature-space term.

    Returns the updated learner and the mean task loss seen before each step.
    ``lr == 0`` leaves ``h`` untouched (a frozen learner).
    """
    if len(y) == 0:
        return h, float("nan")
    seen = []
    for _ in range(epochs):
        order = rng.permutation(len(y))
        for i in range(0, len(y), batch_size):
            idx = order[i:i + batch_size]
            xb, yb = x[idx], y[idx]
            logits, feats = L.forward(h, xb)
            logits = np.atleast_2d(logits)
            seen.append(L.sample_losses(kind, logits, yb))
            if lr <= 0:
                continue
            dlogits = L.loss_grad_logits(kind, logits, yb)
            if loss_weight != 1.0:
                dlogits = loss_weight * dlogits
            dfeat = feature_grad(np.atleast_2d(feats)) if feature_grad is not None else None
            grads, _ = L.backprop(h, xb, dlogits, dfeat)
            h = L.sgd_step(h, grads, lr)
    return h, float(np.concatenate(seen).mean())


def task_losses(h: L.LearnerState, x: np.ndarray, y: np.ndarray, kind: str) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample loss and, for grid tasks, the (N, cells) per-cell losses."""
    logits, _ = L.forward(h, x)
    logits = np.atleast_2d(logits)
    if kind == "per_cell_cross_entropy":
        cells = L.cell_losses(kind, logits, y)
        return cells.mean(axis=1), cells
    return L.sample_losses(kind, logits, y), None


def _sign(cfg) -> float:
    return 1.0 if cfg.reward_sign == "loss_as_reward" else -1.0


def compute_reward(h: L.LearnerState, sample, cfg, g=None):
    """Reward for one rendered sample.

    ``loss_as_reward`` gives ``+d`` (the policy seeks high-loss parameters),
    ``paper_literal`` gives ``-d``. For grid scenes the result is an (R, C)
    array of per-cell cross-entropies (with the sign applied); callers pick
    the occupied cells.
    """
    x = sample.image.reshape(1, -1)
    lab = np.asarray(sample.label)
    if lab.ndim == 2:
        cells = L.cell_losses("per_cell_cross_entropy", L.forward(h, x)[0].reshape(1, -1), lab.reshape(1, -1))
        return _sign(cfg) * cells[0].reshape(lab.shape)
    return _sign(cfg) * float(L.sample_losses("cross_entropy_softmax", L.forward(h, x)[0].reshape(1, -1), lab.reshape(1))[0])


def _draw_rewards(g, draws, sample_loss: np.ndarray, cell_loss: np.ndarray | None, scale: float) -> list:
    if cell_loss is None:
        return [scale * float(v) for v in sample_loss]
    cols = g.space.grid_cols
    out = []
    for i, d in enumerate(draws):
        slots = [th[0] * cols + th[1] for th in (cell_to_theta(g.space, c) for c in d.cells)]
        out.append(scale * cell_loss[i, slots])
    return out


def _mean_reward(rewards: list) -> float:
    if not rewards:
        return float("nan")
    return float(np.concatenate([np.atleast_1d(r) for r in rewards]).mean())


def _record(metrics: RunMetrics, it: int, h, target: TargetData | None, kind: str, source_loss: float, mean_reward: float, ent: float, t0: float, renders: int) -> None:
    if target is not None:
        rep = L.evaluate(h, target.x, target.y, kind)
        acc, tl = rep.accuracy, rep.mean_loss
    else:
        acc = tl = float("nan")
    metrics.records.append({
        "iter": it + 1, "target_acc": acc, "target_loss": tl, "source_loss": source_loss,
        "mean_reward": mean_reward, "entropy": ent, "seed": metrics.seed,
        "wall_clock": time.perf_counter() - t0, "renders": renders,
    })


def _policy_for(g) -> P.PolicyState:
    return P.uniform_policy(g.n_cells, shape=g.space.factor_sizes)


# ---------------------------------------------------------------------------
# loops


def run_dr(cfg: DrConfig, g, h: L.LearnerState, target: TargetData | None = None,
           on_iteration: Callable | None = None) -> tuple[L.LearnerState, RunMetrics]:
    """Uniform domain randomization: each iteration renders ``m`` fresh samples
    with uniformly drawn parameters and trains the learner on them."""
    cfg.validate()
    kind = loss_kind(g)
    uniform = _policy_for(g)
    rng_theta = make_rng(cfg.seed, "theta", "train")
    rng_batch = make_rng(cfg.seed, "batches")
    metrics = RunMetrics(cfg.seed)
    ent = P.entropy(uniform)
    t0 = time.perf_counter()
    for it in range(cfg.iterations):
        before = g.render_calls
        draws = draw_thetas(g, uniform, rng_theta, cfg.m)
        x, y = render_draws(g, draws, cfg.seed, "train", it)
        h, src = train_learner(h, x, y, kind, _lr_at(cfg, it), cfg.epochs, cfg.batch_size, rng_batch)
        _record(metrics, it, h, target, kind, src, float("nan"), ent, t0, g.render_calls - before)
        if on_iteration is not None:
            on_iteration(it, h, None)
    return h, metrics


def _check_policy(g, pi: P.PolicyState) -> None:
    if pi.n_cells != g.n_cells:
        raise ConfigError(f"policy has {pi.n_cells} cells but the simulator has {g.n_cells}")


def _policy_update(pi: P.PolicyState, draws, rewards, cfg) -> P.PolicyState:
    grad = P.reinforce_grad(pi, draws, rewards)  # baseline from earlier batches
    if cfg.entropy_coef:
        grad = grad + cfg.entropy_coef * P.entropy_grad(pi)
    pi = P.update_baseline(pi, rewards)
    if cfg.policy_lr > 0:
        pi = P.policy_step(pi, grad, cfg.policy_lr)
    return pi


def run_vadra(cfg: VadraConfig, g, h: L.LearnerState, pi: P.PolicyState, target: TargetData | None = None,
              on_iteration: Callable | None = None) -> tuple[L.LearnerState, P.PolicyState, RunMetrics]:
    """Adversarial loop: train the learner on ``m1`` policy draws, then score
    ``m2`` fresh draws with the updated learner and take a REINFORCE step."""
    cfg.validate()
    _check_policy(g, pi)
    kind = loss_kind(g)
    rng_train = make_rng(cfg.seed, "theta", "train")
    rng_pol = make_rng(cfg.seed, "theta", "policy")
    rng_batch = make_rng(cfg.seed, "batches")
    metrics = RunMetrics(cfg.seed)
    sign = _sign(cfg)
    t0 = time.perf_counter()
    for it in range(cfg.iterations):
        before = g.render_calls
        draws = draw_thetas(g, pi, rng_train, cfg.m1)
        x, y = render_draws(g, draws, cfg.seed, "train", it)
        h, src = train_learner(h, x, y, kind, _lr_at(cfg, it), cfg.epochs, cfg.batch_size, rng_batch)

        rewards = []
        if cfg.m2 > 0:
            draws2 = draw_thetas(g, pi, rng_pol, cfg.m2)
            x2, y2 = render_draws(g, draws2, cfg.seed, "policy", it)
            sl, cl = task_losses(h, x2, y2, kind)
            rewards = _draw_rewards(g, draws2, sl, cl, sign)
            pi = _policy_update(pi, draws2, rewards, cfg)
        _record(metrics, it, h, target, kind, src, _mean_reward(rewards), P.entropy(pi), t0, g.render_calls - before)
        if on_iteration is not None:
            on_iteration(it, h, pi)
    return h, pi, metrics


# ---------------------------------------------------------------------------
# domain classifier


def init_domain_classifier(feature_dim: int, rng: np.random.Generator, hidden: int = 64) -> L.LearnerState:
    """Features -> 2 logits (source = 0, target = 1)."""
    return L.init_mlp([feature_dim, hidden, 2], rng)


def domain_prob(d: L.LearnerState, feats: np.ndarray) -> np.ndarray:
    """P(target | features), clamped to ``[eps, 1 - eps]``."""
    logits, _ = L.forward(d, np.atleast_2d(feats))
    return np.clip(L.softmax(np.atleast_2d(logits))[:, 1], D_EPS, 1.0 - D_EPS)


def log_domain_grad(d: L.LearnerState, feats: np.ndarray) -> np.ndarray:
    """Per-row gradient of ``log D(f)`` with respect to the features ``f``."""
    feats = np.atleast_2d(feats)
    logits, _ = L.forward(d, feats)
    p = L.softmax(np.atleast_2d(logits))
    dlogits = -p
    dlogits[:, 1] += 1.0
    # the clamp has zero slope where it is active
    active = (p[:, 1] < D_EPS) | (p[:, 1] > 1.0 - D_EPS)
    dlogits[active] = 0.0
    _, dx = L.backprop(d, feats, dlogits)
    return dx


def train_domain_classifier(d: L.LearnerState, source_feats: np.ndarray, target_feats: np.ndarray, lr: float,
                            rng: np.random.Generator | None = None, batch_size: int = 32) -> tuple[L.LearnerState, float]:
    """One epoch of minibatch SGD on class-balanced cross-entropy.

    Each domain carries half of the total loss weight regardless of its size.
    Returns the updated classifier and its balanced accuracy on the same data.
    """
    fs = np.atleast_2d(np.asarray(source_feats, dtype=np.float64))
    ft = np.atleast_2d(np.asarray(target_feats, dtype=np.float64))
    if len(source_feats) == 0 or len(target_feats) == 0:
        raise InvalidParameterError("both feature sets must be non-empty")
    if fs.shape[1] != ft.shape[1] or fs.shape[1] != d.input_dim:
        raise L.ShapeError(f"feature dims {fs.shape[1]}, {ft.shape[1]} vs classifier input {d.input_dim}")
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.vstack([fs, ft])
    y = np.concatenate([np.zeros(len(fs), np.int64), np.ones(len(ft), np.int64)])
    n = len(y)
    wts = np.where(y == 0, n / (2.0 * len(fs)), n / (2.0 * len(ft)))
    if lr > 0:
        order = rng.permutation(n)
        for i in range(0, n, batch_size):
            idx = order[i:i + batch_size]
            logits, _ = L.forward(d, x[idx])
            dlog = L.loss_grad_logits("cross_entropy_softmax", logits, y[idx]) * wts[idx, None]
            grads, _ = L.backprop(d, x[idx], dlog)
            d = L.sgd_step(d, grads, lr)
    pred = (domain_prob(d, x) > 0.5).astype(np.int64)
    acc = 0.5 * ((pred[y == 0] == 0).mean() + (pred[y == 1] == 1).mean())
    return d, float(acc)


def run_vadra_da(cfg: VadraConfig, g, h: L.LearnerState, pi: P.PolicyState, d: L.LearnerState, target_pool: np.ndarray,
                 target: TargetData | None = None, on_iteration: Callable | None = None):
    """Adversarial loop with a domain classifier ``D`` on penultimate features.

    Per iteration: (a) fit D for ``domain_epochs`` epochs on source features of the learner
    batch against an equal-size batch from ``target_pool``; (b) train the
    learner on ``w3*d + w4*log D(f)`` with D frozen; (c) reward the policy
    with ``w1*(+/-d) + w2*log D(f)``, the sign of the first term set by
    ``reward_sign``. The learner term pushes source features away from
    "target", which is what lets D (and so the policy) see which source
    samples resemble the target.
    With ``w2 == w4 == 0`` the learner and policy trajectories equal
    ``run_vadra`` under the same seed.
    """
    cfg.validate()
    _check_policy(g, pi)
    pool = np.asarray(target_pool, dtype=np.float64)
    if pool.ndim != 2 or len(pool) == 0:
        raise InvalidParameterError("target pool must be a non-empty (n, pixels) array")
    kind = loss_kind(g)
    rng_train = make_rng(cfg.seed, "theta", "train")
    rng_pol = make_rng(cfg.seed, "theta", "policy")
    rng_batch = make_rng(cfg.seed, "batches")
    rng_dom = make_rng(cfg.seed, "domain")
    metrics = RunMetrics(cfg.seed)
    sign = _sign(cfg)
    use_da = cfg.w2 > 0 or cfg.w4 > 0
    t0 = time.perf_counter()
    for it in range(cfg.iterations):
        before = g.render_calls
        draws = draw_thetas(g, pi, rng_train, cfg.m1)
        x, y = render_draws(g, draws, cfg.seed, "train", it)

        if use_da and len(y):
            tb = pool[rng_dom.choice(len(pool), size=len(y), replace=len(pool) < len(y))]
            _, fs = L.forward(h, x)
            _, ft = L.forward(h, tb)
            for _ in range(cfg.domain_epochs):
                d, _ = train_domain_classifier(d, fs, ft, cfg.domain_lr, rng_dom)

        feature_grad = None
        if cfg.w4 > 0:
            d_frozen = d

            def feature_grad(feats, _d=d_frozen):
                return cfg.w4 * log_domain_grad(_d, feats) / len(feats)

        h, src = train_learner(h, x, y, kind, _lr_at(cfg, it), cfg.epochs, cfg.batch_size, rng_batch,
                               loss_weight=cfg.w3, feature_grad=feature_grad)

        rewards = []
        if cfg.m2 > 0:
            draws2 = draw_thetas(g, pi, rng_pol, cfg.m2)
            x2, y2 = render_draws(g, draws2, cfg.seed, "policy", it)
            sl, cl = task_losses(h, x2, y2, kind)
            rewards = _draw_rewards(g, draws2, sl, cl, sign * cfg.w1)
            if cfg.w2 > 0:
                _, f2 = L.forward(h, x2)
                logd = np.log(domain_prob(d, f2))
                rewards = [r + cfg.w2 * ld for r, ld in zip(rewards, logd)]
            pi = _policy_update(pi, draws2, rewards, cfg)
        _record(metrics, it, h, target, kind, src, _mean_reward(rewards), P.entropy(pi), t0, g.render_calls - before)
        if on_iteration is not None:
            on_iteration(it, h, pi)
    return h, pi, d, metrics


def config_fields(cls) -> list[str]:
    return [f.name for f in fields(cls)]
