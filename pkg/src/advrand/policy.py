"""Categorical sampling policy over discrete rendering cells, trained by REINFORCE.

The policy stores unconstrained logits; probabilities are their softmax. For
grid scenes the logits are laid out as (row, col, class) flattened in C
order, so ``to_heatmap`` just sums over the class axis.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import InvalidParameterError, NumericError
from .learner import log_softmax


@dataclass
class PolicyState:
    logits: np.ndarray
    baseline: float = 0.0
    baseline_decay: float = 0.9
    step: int = 0
    shape: tuple | None = None  # factor layout of the flat logits, if any

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64).reshape(-1)
        if self.logits.size < 1:
            raise InvalidParameterError("policy needs at least one cell")
        if not 0.0 <= self.baseline_decay <= 1.0:
            raise InvalidParameterError("baseline_decay must lie in [0, 1]")
        if self.shape is not None and int(np.prod(self.shape)) != self.logits.size:
            raise InvalidParameterError(f"layout {self.shape} does not match {self.logits.size} logits")

    @property
    def n_cells(self) -> int:
        return self.logits.size

    def log_probs(self) -> np.ndarray:
        return log_softmax(self.logits)

    def probs(self) -> np.ndarray:
        p = np.exp(self.log_probs())
        return p / p.sum()

    def copy(self) -> "PolicyState":
        return replace(self, logits=self.logits.copy())


def uniform_policy(n_cells: int, shape: tuple | None = None, baseline_decay: float = 0.9) -> PolicyState:
    return PolicyState(np.zeros(n_cells), baseline_decay=baseline_decay, shape=shape)


@dataclass(frozen=True)
class ThetaDraw:
    cells: tuple
    log_prob: float

    @property
    def cell(self) -> int:
        return self.cells[0]


def sample_cells(pi: PolicyState, rng: np.random.Generator, m: int) -> np.ndarray:
    """``m`` i.i.d. cell indices from softmax(logits)."""
    if m < 1:
        raise InvalidParameterError("need at least one draw")
    return rng.choice(pi.n_cells, size=m, p=pi.probs())


def sample(pi: PolicyState, rng: np.random.Generator, m: int) -> list[ThetaDraw]:
    cells = sample_cells(pi, rng, m)
    lp = pi.log_probs()
    return [ThetaDraw((int(c),), float(lp[c])) for c in cells]


def sample_scene(pi: PolicyState, rng: np.random.Generator, n_objects: int, n_classes: int) -> ThetaDraw:
    """Visit the spawn map ``n_objects`` times without reusing a grid cell.

    A draw landing on an occupied (row, col) is redrawn; this is done exactly
    by renormalising over the free cells. ``log_prob`` is the sum of the
    unconditioned log-probabilities of the accepted draws.
    """
    p = pi.probs()
    lp = pi.log_probs()
    n_slots = pi.n_cells // n_classes
    if n_objects > n_slots:
        raise InvalidParameterError(f"{n_objects} objects do not fit in {n_slots} cells")
    free = np.ones(pi.n_cells, dtype=bool)
    cells = []
    for _ in range(n_objects):
        q = np.where(free, p, 0.0)
        q /= q.sum()
        c = int(rng.choice(pi.n_cells, p=q))
        cells.append(c)
        slot = c // n_classes
        free[slot * n_classes:(slot + 1) * n_classes] = False
    return ThetaDraw(tuple(cells), float(lp[cells].sum()))


def score(pi: PolicyState, draw: ThetaDraw) -> np.ndarray:
    """Gradient of log pi(draw) with respect to the logits."""
    g = -len(draw.cells) * pi.probs()
    np.add.at(g, list(draw.cells), 1.0)
    return g


def reinforce_grad(pi: PolicyState, draws: Sequence[ThetaDraw], rewards: Sequence, baseline: float | None = None) -> np.ndarray:
    """Score-function estimate ``mean_i grad log pi(theta_i) * (r_i - b)``.

    ``rewards[i]`` is either a scalar, or a sequence with one reward per cell
    of ``draws[i]`` (per-cell credit for multi-placement scenes). ``b`` is
    ``pi.baseline`` unless overridden.
    """
    if len(draws) != len(rewards):
        raise InvalidParameterError(f"{len(draws)} draws but {len(rewards)} rewards")
    if len(draws) == 0:
        raise InvalidParameterError("need at least one draw")
    b = pi.baseline if baseline is None else float(baseline)
    p = pi.probs()
    cells, adv = [], []
    for d, r in zip(draws, rewards):
        r = np.asarray(r, dtype=np.float64)
        if r.ndim == 0:
            r = np.full(len(d.cells), float(r))
        elif r.shape != (len(d.cells),):
            raise InvalidParameterError("per-cell rewards must match the draw's cells")
        cells.extend(d.cells)
        adv.append(r - b)
    adv = np.concatenate(adv)
    g = np.bincount(np.asarray(cells), weights=adv, minlength=pi.n_cells) - p * adv.sum()
    return g / len(draws)


def expected_gradient(pi: PolicyState, cell_rewards: np.ndarray, baseline: float = 0.0) -> np.ndarray:
    """Exact ``E[grad log pi(theta) (r(theta) - b)]`` by enumerating every cell."""
    p = pi.probs()
    r = np.asarray(cell_rewards, dtype=np.float64)
    # sum_i p_i (e_i - p)(r_i - b)
    adv = r - baseline
    return p * adv - p * (p @ adv)


def update_baseline(pi: PolicyState, rewards) -> PolicyState:
    r = np.concatenate([np.atleast_1d(np.asarray(x, dtype=np.float64)) for x in rewards]) if len(rewards) else np.array([])
    if r.size == 0:
        raise InvalidParameterError("cannot update the baseline from no rewards")
    b = pi.baseline_decay * pi.baseline + (1.0 - pi.baseline_decay) * float(r.mean())
    return replace(pi, logits=pi.logits.copy(), baseline=b)


def policy_step(pi: PolicyState, grad: np.ndarray, lr: float) -> PolicyState:
    """Gradient ascent on the expected reward."""
    if not lr > 0:
        raise InvalidParameterError("policy learning rate must be positive")
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite policy gradient")
    return replace(pi, logits=pi.logits + lr * grad, step=pi.step + 1)


def entropy(pi: PolicyState) -> float:
    p, lp = pi.probs(), pi.log_probs()
    return float(-(p * lp).sum())


def entropy_grad(pi: PolicyState) -> np.ndarray:
    p, lp = pi.probs(), pi.log_probs()
    return -p * (lp + entropy(pi))


def marginal(pi: PolicyState, axis: int) -> np.ndarray:
    """Marginal distribution of one factor of the cell layout."""
    if pi.shape is None:
        raise InvalidParameterError("policy has no factor layout")
    p = pi.probs().reshape(pi.shape)
    other = tuple(i for i in range(len(pi.shape)) if i != axis)
    return p.sum(axis=other)


def to_heatmap(pi: PolicyState, rows: int, cols: int) -> np.ndarray:
    """Spawn probability per grid cell (summed over classes)."""
    p = pi.probs()
    if p.size % (rows * cols):
        raise InvalidParameterError(f"{p.size} cells do not tile a {rows}x{cols} grid")
    return p.reshape(rows, cols, -1).sum(axis=2)


def write_heatmap_csv(path, heat: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        for row in heat:
            wr.writerow([repr(float(v)) for v in row])


def write_pgm(path, heat: np.ndarray) -> None:
    """P5 grayscale, linearly rescaled so the largest cell maps to 255."""
    heat = np.asarray(heat, dtype=np.float64)
    top = heat.max()
    scaled = np.zeros_like(heat) if top <= 0 else heat / top
    data = np.round(scaled * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def save_policy(path, pi: PolicyState) -> None:
    with open(path, "wb") as fh:
        np.savez(
            fh,
            version=np.array(1),
            logits=pi.logits,
            baseline=np.array(pi.baseline),
            baseline_decay=np.array(pi.baseline_decay),
            step=np.array(pi.step),
            shape=np.array(pi.shape if pi.shape is not None else (), dtype=np.int64),
        )


def load_policy(path) -> PolicyState:
    with np.load(path) as d:
        shape = tuple(int(s) for s in d["shape"]) or None
        return PolicyState(d["logits"].copy(), float(d["baseline"]), float(d["baseline_decay"]), int(d["step"]), shape)
