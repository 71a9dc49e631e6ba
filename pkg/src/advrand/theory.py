"""Multi-source generalization bound and an empirical divergence proxy.

For N sources with mixture weights ``alpha``, sampling fractions ``beta``,
per-source labelling gaps ``lambda_i`` and divergences ``div_i`` the bound on
the target error of the empirical minimizer is::

    eps_star + sum_i alpha_i * s_i
             + 2 * sqrt( (sum_i alpha_i^2 / beta_i) * (d_vc*ln(2m) - ln(delta)) / (2m) )

with ``s_i = 2*lambda_i + div_i``. Logarithms are natural. ``c_delta`` is the
same expression with the weight factor fixed at 1.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import InvalidParameterError


@dataclass(frozen=True)
class BoundInputs:
    d_vc: int
    m: float
    delta: float
    alpha: tuple
    beta: tuple
    lam: tuple = None  # defaults to zeros: simulator labels agree with the target
    div: tuple = None
    eps_star: float = 0.0

    def __post_init__(self):
        n = len(self.alpha)
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "lam", tuple(float(v) for v in (self.lam if self.lam is not None else [0.0] * n)))
        object.__setattr__(self, "div", tuple(float(v) for v in (self.div if self.div is not None else [0.0] * n)))

    @property
    def n_sources(self) -> int:
        return len(self.alpha)

    @classmethod
    def uniform(cls, n: int, **kw) -> "BoundInputs":
        w = tuple([1.0 / n] * n)
        return cls(alpha=w, beta=w, **kw)


@dataclass
class BoundReport:
    total: float
    eps_star: float
    source_term: float  # sum_i alpha_i s_i
    complexity_term: float
    s: tuple
    c_delta: float
    weight_factor: float  # sum_i alpha_i^2 / beta_i


def validate(inp: BoundInputs) -> None:
    n = inp.n_sources
    if n < 1:
        raise InvalidParameterError("need at least one source")
    if any(len(v) != n for v in (inp.beta, inp.lam, inp.div)):
        raise InvalidParameterError("alpha, beta, lambda and div must all have length N")
    if int(inp.d_vc) != inp.d_vc or inp.d_vc < 1:
        raise InvalidParameterError("VC dimension must be a positive integer")
    if not inp.m >= 1:
        raise InvalidParameterError("sample count m must be >= 1")
    if not 0.0 < inp.delta < 1.0:
        raise InvalidParameterError("delta must lie in (0, 1)")
    a, b = np.array(inp.alpha), np.array(inp.beta)
    if (a < 0).any() or (b < 0).any():
        raise InvalidParameterError("alpha and beta must be non-negative")
    if abs(a.sum() - 1.0) > 1e-9 or abs(b.sum() - 1.0) > 1e-9:
        raise InvalidParameterError("alpha and beta must each sum to 1")
    if min(inp.lam) < 0 or min(inp.div) < 0 or inp.eps_star < 0:
        raise InvalidParameterError("lambda, divergences and eps_star must be >= 0")
    if ((a > 0) & (b == 0)).any():
        raise ZeroDivisionError("beta_i = 0 for a source with alpha_i > 0")


def _confidence(d_vc: int, m: float, delta: float) -> float:
    return (d_vc * math.log(2.0 * m) - math.log(delta)) / (2.0 * m)


def weight_factor(alpha: Sequence[float], beta: Sequence[float]) -> float:
    # sources with alpha_i = 0 contribute nothing, whatever beta_i is
    return math.fsum(a * a / b for a, b in zip(alpha, beta) if a > 0)


def source_distances(inp: BoundInputs) -> tuple:
    return tuple(2.0 * l + d for l, d in zip(inp.lam, inp.div))


def c_delta(inp: BoundInputs) -> float:
    return inp.eps_star + 2.0 * math.sqrt(_confidence(inp.d_vc, inp.m, inp.delta))


def multi_source_bound(inp: BoundInputs) -> BoundReport:
    validate(inp)
    s = source_distances(inp)
    wf = weight_factor(inp.alpha, inp.beta)
    src = math.fsum(a * si for a, si in zip(inp.alpha, s))
    comp = 2.0 * math.sqrt(wf * _confidence(inp.d_vc, inp.m, inp.delta))
    # summed as (eps_star + complexity) + sources, the same order as c_delta + s_k
    return BoundReport((inp.eps_star + comp) + src, inp.eps_star, src, comp, s, c_delta(inp), wf)


def single_source_bound(inp: BoundInputs, k: int) -> float:
    """``c_delta + s_k``: all m samples drawn from source k (0-based)."""
    validate(inp)
    if not 0 <= k < inp.n_sources:
        raise InvalidParameterError(f"source index {k} out of range")
    return c_delta(inp) + source_distances(inp)[k]


def uniform_multi_bound(inp: BoundInputs) -> float:
    """``c_delta + mean(s)``: equal weights and equal sampling over all sources."""
    validate(inp)
    s = source_distances(inp)
    return c_delta(inp) + math.fsum(s) / len(s)


# ---------------------------------------------------------------------------
# sweeps

SWEEP_COLUMNS = (
    "N", "d_vc", "m", "delta", "eps_star", "weight_factor", "s_mean",
    "source_term", "complexity_term", "c_delta", "total", "uniform_multi", "best_single", "worst_single",
)


def report_row(inp: BoundInputs) -> dict:
    rep = multi_source_bound(inp)
    singles = [single_source_bound(inp, k) for k in range(inp.n_sources)]
    return {
        "N": inp.n_sources, "d_vc": inp.d_vc, "m": inp.m, "delta": inp.delta, "eps_star": inp.eps_star,
        "weight_factor": rep.weight_factor, "s_mean": math.fsum(rep.s) / len(rep.s),
        "source_term": rep.source_term, "complexity_term": rep.complexity_term, "c_delta": rep.c_delta,
        "total": rep.total, "uniform_multi": uniform_multi_bound(inp),
        "best_single": min(singles), "worst_single": max(singles),
    }


def sweep_m(base: BoundInputs, ms: Sequence[float]) -> list[dict]:
    return [report_row(replace(base, m=float(m))) for m in ms]


def sweep_n(div: Sequence[float], lam: Sequence[float] | None = None, **kw) -> list[dict]:
    """Uniform-weight bound using the first N sources, for N = 1..len(div)."""
    lam = list(lam) if lam is not None else [0.0] * len(div)
    rows = []
    for n in range(1, len(div) + 1):
        rows.append(report_row(BoundInputs.uniform(n, lam=lam[:n], div=div[:n], **kw)))
    return rows


def write_sweep_csv(path_or_file, rows: list[dict]) -> None:
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        wr = csv.writer(fh)
        wr.writerow(SWEEP_COLUMNS)
        for row in rows:
            wr.writerow([row[c] if isinstance(row[c], int) else repr(float(row[c])) for c in SWEEP_COLUMNS])
    finally:
        if own:
            fh.close()


# ---------------------------------------------------------------------------
# divergence proxy


def _half_sigmoid_residual(z: np.ndarray, sign: float) -> np.ndarray:
    # sigma(z) - y written as -s * sigma(-s z) with s = 2y - 1; odd in (z, s)
    return -sign * 0.5 * (1.0 - sign * np.tanh(0.5 * z))


def _fit_linear_domain(xs: np.ndarray, xt: np.ndarray, steps: int, lr: float, l2: float) -> tuple[np.ndarray, float]:
    w = np.zeros(xs.shape[1])
    b = 0.0
    n = len(xs) + len(xt)
    for _ in range(steps):
        rs = _half_sigmoid_residual(xs @ w + b, -1.0)
        rt = _half_sigmoid_residual(xt @ w + b, 1.0)
        gw = (xs.T @ rs + xt.T @ rt) / n + l2 * w
        gb = (rs.sum() + rt.sum()) / n
        w = w - lr * gw
        b = b - lr * gb
    return w, b


def estimate_proxy_divergence(source_feats: np.ndarray, target_feats: np.ndarray, steps: int = 300, lr: float = 0.5, l2: float = 1e-3) -> float:
    """Proxy A-distance ``2*(2*acc - 1)`` clamped to [0, 2].

    A logistic domain classifier (zero init, full-batch gradient descent on
    standardised features) is fit on the even-indexed rows of each set and
    scored on the odd-indexed rows. The procedure is symmetric in its two
    arguments. This is a heuristic stand-in, not the H-delta-H divergence.
    """
    xs = np.asarray(source_feats, dtype=np.float64)
    xt = np.asarray(target_feats, dtype=np.float64)
    if xs.ndim == 1:
        xs = xs[:, None]
    if xt.ndim == 1:
        xt = xt[:, None]
    if len(xs) < 2 or len(xt) < 2:
        raise InvalidParameterError("each feature set needs at least two rows")
    if xs.shape[1] != xt.shape[1]:
        raise InvalidParameterError("feature dims differ")
    n = len(xs) + len(xt)
    mu = (xs.sum(axis=0) + xt.sum(axis=0)) / n
    var = (((xs - mu) ** 2).sum(axis=0) + ((xt - mu) ** 2).sum(axis=0)) / n
    sd = np.sqrt(var)
    sd[sd == 0] = 1.0
    xs, xt = (xs - mu) / sd, (xt - mu) / sd
    w, b = _fit_linear_domain(xs[0::2], xt[0::2], steps, lr, l2)
    hs, ht = xs[1::2], xt[1::2]
    correct_s = (hs @ w + b < 0).mean()
    correct_t = (ht @ w + b > 0).mean()
    acc = 0.5 * (correct_s + correct_t)  # balanced accuracy
    return float(np.clip(2.0 * (2.0 * acc - 1.0), 0.0, 2.0))
