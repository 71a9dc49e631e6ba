"""Experiment configuration, presets and the run/compare/bound/preview entry points.

Config files are flat ``key = value`` text; ``#`` starts a comment. Every key
is listed in ``SCHEMA``; unknown keys and malformed values are rejected with
the offending line number. Lists are comma separated.

A run directory holds::

    manifest.json        config echo, config hash, seed, package version, file list
    metrics.csv          one row per iteration (see METRICS_COLUMNS)
    heatmaps/iter_NNNN.{csv,pgm}   grid tasks, policy methods only
    policy_marginals.csv shape-color task, policy methods only
    learner.npz, policy.npz, domain.npz   final checkpoints
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import adversary as A
from . import learner as L
from . import policy as P
from . import theory
from .errors import BudgetMismatchError, ConfigError, NumericError
from .renderer import (
    SHAPES,
    GridSpawnSimulator,
    RenderSpace,
    make_simulator,
    write_labels_csv,
    write_ppm,
)
from .seeding import derive_seed, make_rng

METHODS = ("dr", "vadra", "vadra_da")
METRICS_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "ShapeColor"
    method: str = "dr"
    seed: int = 0
    out: str = "runs/default"
    iterations: int = 200
    # per-iteration budget: dr uses m (defaults to m1 + m2); policy methods use m1 + m2
    m: int = -1
    m1: int = 40
    m2: int = 8
    learner_lr: float = 0.05
    lr_schedule: str = "constant"
    epochs: int = 1
    batch_size: int = 16
    hidden: int = 128
    hidden2: int = 64
    policy_lr: float = 1.0
    baseline_decay: float = 0.9
    entropy_coef: float = 0.0
    reward_sign: str = "loss_as_reward"
    w1: float = 1.0
    w2: float = 0.1
    w3: float = 1.0
    w4: float = 0.1
    domain_lr: float = 0.5
    domain_epochs: int = 5
    domain_hidden: int = 64
    hardness: float = 0.35
    pixel_noise: float = 0.02
    light_jitter: float = 0.1
    position_jitter: float = 3.0
    size_jitter: float = 0.1
    grid_rows: int = 4
    grid_cols: int = 4
    n_classes: int = 2
    min_objects: int = 2
    max_objects: int = 12
    perspective_shrink: float = 0.6
    target_shape: str = "circle"
    target_size: int = 420
    target_pool: int = 500
    heatmap_every: int = 1
    workers: int = 1

    @property
    def budget(self) -> int:
        """Renders consumed per iteration."""
        if self.method == "dr":
            return self.m if self.m >= 0 else self.m1 + self.m2
        return self.m1 + self.m2

    def validate(self) -> None:
        if self.task not in ("ShapeColor", "GridSpawn"):
            raise ConfigError(f"task must be ShapeColor or GridSpawn, got {self.task!r}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.target_shape not in SHAPES + ("any",):
            raise ConfigError(f"target_shape must be one of {SHAPES + ('any',)}")
        for key in ("hidden", "hidden2", "domain_hidden", "target_size", "target_pool", "heatmap_every", "workers"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if not 0.0 <= self.baseline_decay <= 1.0:
            raise ConfigError("baseline_decay must lie in [0, 1]")
        self.render_space()  # raises on bad renderer keys
        self.loop_config().validate()

    def render_space(self) -> RenderSpace:
        common = dict(hardness=self.hardness, pixel_noise=self.pixel_noise, light_jitter=self.light_jitter,
                      position_jitter=self.position_jitter, size_jitter=self.size_jitter)
        try:
            if self.task == "ShapeColor":
                return RenderSpace.shape_color(**common)
            return RenderSpace.grid_spawn(grid_rows=self.grid_rows, grid_cols=self.grid_cols, n_classes=self.n_classes,
                                          min_objects=self.min_objects, max_objects=self.max_objects,
                                          perspective_shrink=self.perspective_shrink, **common)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def loop_config(self):
        shared = dict(iterations=self.iterations, learner_lr=self.learner_lr, lr_schedule=self.lr_schedule,
                      epochs=self.epochs, batch_size=self.batch_size, seed=self.seed)
        if self.method == "dr":
            return A.DrConfig(m=self.budget, **shared)
        return A.VadraConfig(m1=self.m1, m2=self.m2, policy_lr=self.policy_lr, entropy_coef=self.entropy_coef,
                             reward_sign=self.reward_sign, w1=self.w1, w2=self.w2, w3=self.w3, w4=self.w4,
                             domain_lr=self.domain_lr, domain_epochs=self.domain_epochs, **shared)

    def as_text(self) -> str:
        """Canonical flat rendering; ``parse_config_text`` reads it back."""
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in asdict(self).items())

    def digest(self) -> str:
        """sha256 of the canonical text, ignoring the output directory."""
        return hashlib.sha256(replace(self, out="").as_text().encode("utf-8")).hexdigest()


SCHEMA = {f.name: f.type for f in fields(ExperimentConfig)}

PRESETS = {
    "taskA-dr": dict(task="ShapeColor", method="dr", iterations=200),
    "taskA-vadra": dict(task="ShapeColor", method="vadra", iterations=200),
    "taskA-vadra_da": dict(task="ShapeColor", method="vadra_da", iterations=200),
    "taskB-dr": dict(task="GridSpawn", method="dr", iterations=60, m1=16, m2=8, learner_lr=0.1, target_size=200, target_pool=200),
    "taskB-vadra": dict(task="GridSpawn", method="vadra", iterations=60, m1=16, m2=8, learner_lr=0.1, policy_lr=1.0,
                        target_size=200, target_pool=200),
}


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(key: str, raw: str, line: int | None, path: str | None):
    kind = SCHEMA[key]
    try:
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            val = float(raw)
            if not math.isfinite(val):
                raise ValueError
            return val
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}", line, path) from None


def parse_pairs(text: str, path: str | None = None) -> list[tuple[str, str, int]]:
    """``(key, raw value, line)`` for every non-blank, non-comment line."""
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, path)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("missing key", lineno, path)
        pairs.append((key, value, lineno))
    return pairs


def parse_config_text(text: str, path: str | None = None, base: ExperimentConfig | None = None) -> ExperimentConfig:
    values, seen = {}, {}
    for key, raw, lineno in parse_pairs(text, path):
        if key == "preset":
            if raw not in PRESETS:
                raise ConfigError(f"unknown preset {raw!r}", lineno, path)
            continue
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", lineno, path)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first set on line {seen[key]})", lineno, path)
        seen[key] = lineno
        values[key] = _coerce(key, raw, lineno, path)
    presets = [raw for key, raw, _ in parse_pairs(text, path) if key == "preset"]
    cfg = base or ExperimentConfig()
    if presets:
        cfg = replace(cfg, **PRESETS[presets[-1]])
    cfg = replace(cfg, **values)
    try:
        cfg.validate()
    except ConfigError as exc:
        # point at the line that set the first key the message names
        line = next((ln for k, ln in seen.items() if k in str(exc)), None)
        raise ConfigError(str(exc), line, path) from None
    return cfg


def load_config(source: str, **overrides) -> ExperimentConfig:
    """Read a config file, or build one from a preset name."""
    if source in PRESETS:
        cfg = replace(ExperimentConfig(), **PRESETS[source])
    else:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {source!r}: {exc.strerror}") from None
        cfg = parse_config_text(text, str(source))
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if overrides:
        cfg = replace(cfg, **overrides)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# building blocks


@dataclass(frozen=True)
class TargetSpec:
    """Held-out target domain: a frozen shape (ShapeColor) and a sample count.

    Images are balanced over the allowed cells. GridSpawn targets are
    uniformly spawned scenes.
    """

    shape: str | None = "circle"
    size: int = 420
    seed: int = 0


def target_spec(cfg: ExperimentConfig) -> TargetSpec:
    return TargetSpec(None if cfg.target_shape == "any" else cfg.target_shape, cfg.target_size, cfg.seed)


def build_target(g, spec: TargetSpec, stream: str = "target") -> A.TargetData:
    seeds = [derive_seed(spec.seed, stream, i) for i in range(spec.size)]
    if isinstance(g, GridSpawnSimulator):
        rng = make_rng(spec.seed, stream, "scenes")
        draws = A.draw_thetas(g, P.uniform_policy(g.n_cells), rng, spec.size)
        x, y = g.render_batch([d.cells for d in draws], seeds)
    else:
        cells = g.target_cells(spec.shape)
        x, y = g.render_batch([cells[i % len(cells)] for i in range(spec.size)], seeds)
    return A.TargetData(x, y)


def build_pool(g, spec: TargetSpec, size: int) -> np.ndarray:
    """Unlabelled target images, rendered independently of the evaluation set."""
    return build_target(g, replace(spec, size=size), stream="pool").x


def build_learner(cfg: ExperimentConfig, space: RenderSpace) -> L.LearnerState:
    rng = make_rng(cfg.seed, "init", "learner")
    if space.task == "ShapeColor":
        return L.init_mlp([space.n_pixels, cfg.hidden, len(space.palette)], rng)
    return L.init_mlp([space.n_pixels, cfg.hidden, cfg.hidden2, space.n_cells * (space.n_classes + 1)], rng)


def build_policy(cfg: ExperimentConfig, space: RenderSpace) -> P.PolicyState:
    return P.uniform_policy(space.cardinality, shape=space.factor_sizes, baseline_decay=cfg.baseline_decay)


# ---------------------------------------------------------------------------
# run


class RunFailed(Exception):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


def _write_marginals_header(path: Path, space: RenderSpace) -> None:
    names = [f"{factor}_{i}" for factor, n in zip(("shape", "material", "color", "size"), space.factor_sizes) for i in range(n)]
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerow(["iter"] + names)


def _append_marginals(path: Path, it: int, pi: P.PolicyState) -> None:
    vals = np.concatenate([P.marginal(pi, ax) for ax in range(len(pi.shape))])
    with open(path, "a", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerow([it + 1] + [repr(float(v)) for v in vals])


def run_experiment(cfg: ExperimentConfig) -> A.RunMetrics:
    """Execute one configured run and write every output under ``cfg.out``."""
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    space = cfg.render_space()
    g = make_simulator(space, cfg.workers)
    spec = target_spec(cfg)
    target = build_target(make_simulator(space), spec)
    h = build_learner(cfg, space)
    loop = cfg.loop_config()
    files = ["metrics.csv", "learner.npz"]

    last = {"h": h, "pi": None, "d": None}
    heat_dir = out / "heatmaps"
    marg_path = out / "policy_marginals.csv"
    if cfg.method != "dr":
        files.append("policy.npz")
        if space.task == "GridSpawn":
            heat_dir.mkdir(exist_ok=True)
        else:
            _write_marginals_header(marg_path, space)
            files.append("policy_marginals.csv")

    def on_iteration(it, h_now, pi_now):
        last["h"], last["pi"] = h_now, pi_now
        if pi_now is None:
            return
        if space.task == "GridSpawn":
            if (it + 1) % cfg.heatmap_every == 0 or it + 1 == cfg.iterations:
                heat = P.to_heatmap(pi_now, space.grid_rows, space.grid_cols)
                P.write_heatmap_csv(heat_dir / f"iter_{it + 1:04d}.csv", heat)
                P.write_pgm(heat_dir / f"iter_{it + 1:04d}.pgm", heat)
        else:
            _append_marginals(marg_path, it, pi_now)

    try:
        if cfg.method == "dr":
            h, metrics = A.run_dr(loop, g, h, target, on_iteration)
            pi = d = None
        elif cfg.method == "vadra":
            h, pi, metrics = A.run_vadra(loop, g, h, build_policy(cfg, space), target, on_iteration)
            d = None
        else:
            pool = build_pool(make_simulator(space), spec, cfg.target_pool)
            d = A.init_domain_classifier(h.feature_dim, make_rng(cfg.seed, "init", "domain"), cfg.domain_hidden)
            h, pi, d, metrics = A.run_vadra_da(loop, g, h, build_policy(cfg, space), d, pool, target, on_iteration)
            files.append("domain.npz")
    except (NumericError, FloatingPointError) as exc:
        L.save_checkpoint(out / "learner.npz", last["h"])
        if last["pi"] is not None:
            P.save_policy(out / "policy.npz", last["pi"])
        _write_manifest(out, cfg, ["learner.npz"] + (["policy.npz"] if last["pi"] is not None else []), status=f"failed: {exc}")
        raise RunFailed(f"numeric failure: {exc}", 3) from exc

    metrics.write_csv(out / "metrics.csv")
    L.save_checkpoint(out / "learner.npz", h)
    if pi is not None:
        P.save_policy(out / "policy.npz", pi)
    if d is not None:
        L.save_checkpoint(out / "domain.npz", d)
    if cfg.method != "dr" and space.task == "GridSpawn":
        files.extend(sorted(f"heatmaps/{p.name}" for p in heat_dir.iterdir()))
    _write_manifest(out, cfg, files)
    return metrics


def _write_manifest(out: Path, cfg: ExperimentConfig, files: Sequence[str], status: str = "ok") -> None:
    manifest = {
        "package_version": __version__,
        "metrics_schema_version": METRICS_SCHEMA_VERSION,
        "metrics_columns": list(A.METRICS_COLUMNS),
        "status": status,
        "seed": cfg.seed,
        "config_sha256": cfg.digest(),
        "budget_per_iteration": cfg.budget,
        "config": asdict(cfg),
        "files": list(files),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# compare


def _read_run(run_dir) -> tuple[dict, list[dict]]:
    run_dir = Path(run_dir)
    try:
        manifest = json.loads((run_dir / "manifest.json").read_text())
        with open(run_dir / "metrics.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(f"{run_dir}: not a run directory ({exc.strerror})") from None
    return manifest, rows


def _budget_desc(cfg: dict) -> str:
    if cfg["method"] == "dr":
        return f"m={cfg['m'] if cfg['m'] >= 0 else cfg['m1'] + cfg['m2']}"
    return f"m1+m2={cfg['m1'] + cfg['m2']} (m1={cfg['m1']}, m2={cfg['m2']})"


def compare(run_dirs: Sequence, out_path=None, metric: str = "target_acc") -> list[dict]:
    """Per-iteration mean and population std of ``metric`` for each method.

    Refuses runs from different tasks or with different per-iteration render
    budgets. Writes a CSV when ``out_path`` is given and returns the rows.
    """
    if not run_dirs:
        raise ConfigError("compare needs at least one run directory")
    runs = [(Path(d), *_read_run(d)) for d in run_dirs]
    ref_dir, ref, _ = runs[0]
    ref_cfg = ref["config"]
    for d, man, _ in runs[1:]:
        cfg = man["config"]
        if cfg["task"] != ref_cfg["task"]:
            raise ConfigError(f"task mismatch: {ref_dir} has {ref_cfg['task']}, {d} has {cfg['task']}")
        if man["budget_per_iteration"] != ref["budget_per_iteration"]:
            raise BudgetMismatchError(
                f"budget mismatch: {ref_dir} ({ref_cfg['method']}) {_budget_desc(ref_cfg)} != "
                f"{d} ({cfg['method']}) {_budget_desc(cfg)}"
            )
    methods = sorted({man["config"]["method"] for _, man, _ in runs}, key=METHODS.index)
    series: dict[str, dict[int, list[float]]] = {m: {} for m in methods}
    for _, man, rows in runs:
        for row in rows:
            series[man["config"]["method"]].setdefault(int(row["iter"]), []).append(float(row[metric]))
    iters = sorted({i for s in series.values() for i in s})
    out_rows = []
    for it in iters:
        row = {"iter": it}
        for m in methods:
            vals = np.array(series[m].get(it, []), dtype=np.float64)
            row[f"{m}_mean"] = float(vals.mean()) if len(vals) else float("nan")
            row[f"{m}_std"] = float(vals.std()) if len(vals) else float("nan")
            row[f"{m}_n"] = len(vals)
        out_rows.append(row)
    if out_path is not None:
        cols = ["iter"] + [f"{m}_{s}" for m in methods for s in ("mean", "std", "n")]
        with open(out_path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(cols)
            for row in out_rows:
                wr.writerow([row[c] if isinstance(row[c], int) else repr(row[c]) for c in cols])
    return out_rows


# ---------------------------------------------------------------------------
# bound

BOUND_KEYS = {"d_vc", "m", "delta", "alpha", "beta", "lambda", "div", "eps_star", "sweep", "sweep_values"}


def _floats(raw: str, key: str, line: int, path) -> list[float]:
    try:
        return [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers", line, path) from None


def parse_bound_config(text: str, path: str | None = None) -> tuple[theory.BoundInputs, str, list[float]]:
    vals, lines = {}, {}
    for key, raw, lineno in parse_pairs(text, path):
        if key not in BOUND_KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno, path)
        vals[key], lines[key] = raw, lineno
    for req in ("d_vc", "m", "delta", "div"):
        if req not in vals:
            raise ConfigError(f"missing required key {req!r}", None, path)
    div = _floats(vals["div"], "div", lines["div"], path)
    n = len(div)
    uniform = ",".join([repr(1.0 / n)] * n)
    alpha = _floats(vals.get("alpha", uniform), "alpha", lines.get("alpha", 0), path)
    beta = _floats(vals.get("beta", uniform), "beta", lines.get("beta", 0), path)
    lam = _floats(vals.get("lambda", ",".join(["0"] * n)), "lambda", lines.get("lambda", 0), path)
    try:
        inp = theory.BoundInputs(d_vc=int(vals["d_vc"]), m=float(vals["m"]), delta=float(vals["delta"]), alpha=alpha,
                                 beta=beta, lam=lam, div=div, eps_star=float(vals.get("eps_star", 0.0)))
    except ValueError as exc:
        raise ConfigError(str(exc), None, path) from None
    sweep = vals.get("sweep", "none")
    if sweep not in ("none", "m", "N"):
        raise ConfigError("sweep must be none, m or N", lines.get("sweep"), path)
    values = _floats(vals.get("sweep_values", ""), "sweep_values", lines.get("sweep_values", 0), path)
    if sweep == "m" and not values:
        raise ConfigError("sweep = m needs sweep_values", lines.get("sweep"), path)
    try:
        theory.validate(inp)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(str(exc), None, path) from None
    return inp, sweep, values


def bound(config_path, out=None) -> list[dict]:
    text = Path(config_path).read_text()
    inp, sweep, values = parse_bound_config(text, str(config_path))
    if sweep == "m":
        rows = theory.sweep_m(inp, values)
    elif sweep == "N":
        rows = theory.sweep_n(inp.div, inp.lam, d_vc=inp.d_vc, m=inp.m, delta=inp.delta, eps_star=inp.eps_star)
    else:
        rows = [theory.report_row(inp)]
    if out is not None:
        theory.write_sweep_csv(out, rows)
    return rows


# ---------------------------------------------------------------------------
# render preview


def render_preview(cfg: ExperimentConfig, count: int = 8, out=None) -> list[str]:
    """Render ``count`` uniformly drawn samples as PPM files plus a labels CSV."""
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    space = cfg.render_space()
    g = make_simulator(space)
    draws = A.draw_thetas(g, P.uniform_policy(g.n_cells), make_rng(cfg.seed, "preview"), count)
    seeds = [derive_seed(cfg.seed, "preview", i) for i in range(count)]
    names, labels = [], []
    for i, (d, s) in enumerate(zip(draws, seeds)):
        sample = g.render(d.cells if isinstance(g, GridSpawnSimulator) else d.cell, s)
        name = f"sample_{i:04d}.ppm"
        write_ppm(out / name, sample.image)
        names.append(name)
        labels.append(sample.label)
    write_labels_csv(out / "labels.csv", labels, space)
    return names + ["labels.csv"]
