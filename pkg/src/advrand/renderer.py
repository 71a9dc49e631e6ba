"""Procedural 2-D scene generator.

Two tasks share one module:

* ``ShapeColor``: a single shape on a black 32x32 canvas. The rendering
  parameters are (shape, material, color, size) and the label is the color
  index. 3 x 2 x 6 x 7 = 252 discrete cells.
* ``GridSpawn``: a 64x64 "ground plane" split into R x C cells. Objects of K
  classes are spawned into cells; cells further from the camera (higher row
  index, drawn nearer the top of the image) get smaller footprints. The label
  is the occupancy grid.

Everything continuous (jitter, appearance, pixel noise) is drawn from
``noise_seed`` alone, so rendering is a pure function of its inputs.
"""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidParameterError
from .seeding import derive_seed

SHAPES = ("circle", "square", "triangle")
MATERIALS = ("flat", "shaded")
COLOR_NAMES = ("red", "yellow", "green", "cyan", "blue", "magenta")
GRID_CLASSES = ("car", "person")

_HI, _LO = 0.75, 0.15
DEFAULT_PALETTE = (
    (_HI, _LO, _LO),
    (_HI, _HI, _LO),
    (_LO, _HI, _LO),
    (_LO, _HI, _HI),
    (_LO, _LO, _HI),
    (_HI, _LO, _HI),
)
DEFAULT_SIZE_RADII = (3.5, 4.5, 5.5, 6.5, 7.5, 8.5, 9.5)

EMPTY = 0  # occupancy label for an empty cell; class c is stored as c + 1

TASKS = ("ShapeColor", "GridSpawn")


@dataclass(frozen=True)
class RenderSpace:
    """Static description of a rendering task.

    ``hardness`` is the brightness-jitter gain: a ShapeColor object of size
    index ``s`` has its color scaled by ``exp(-hardness * s * v)`` with
    ``v ~ U[0, 2]``, so larger objects are rendered darker on average and with
    a wider spread. Hue ratios are preserved, so every cell stays decodable.
    """

    task: str = "ShapeColor"
    height: int = 32
    width: int = 32
    grid_rows: int = 4
    grid_cols: int = 4
    n_classes: int = 2
    palette: tuple = DEFAULT_PALETTE
    size_radii: tuple = DEFAULT_SIZE_RADII
    hardness: float = 0.35
    pixel_noise: float = 0.02
    light_jitter: float = 0.1
    position_jitter: float = 3.0
    size_jitter: float = 0.1
    perspective_shrink: float = 0.6
    background: float = 0.2  # GridSpawn ground level; ShapeColor is always black
    min_objects: int = 2
    max_objects: int = 12

    def __post_init__(self):
        if self.task not in TASKS:
            raise InvalidParameterError(f"unknown task {self.task!r}")
        if len(self.palette) != len(COLOR_NAMES):
            raise InvalidParameterError("palette must hold 6 RGB triples")
        if len(self.size_radii) != 7:
            raise InvalidParameterError("size table must hold 7 radii")
        if self.hardness < 0:
            raise InvalidParameterError("hardness must be >= 0")
        if self.height < 4 or self.width < 4:
            raise InvalidParameterError("image too small")
        if min(self.grid_rows, self.grid_cols, self.n_classes) < 1:
            raise InvalidParameterError("grid dims and class count must be positive")
        if not 0 <= self.perspective_shrink < 1:
            raise InvalidParameterError("perspective_shrink must lie in [0, 1)")
        if not 2 <= self.min_objects <= self.max_objects <= 12:
            raise InvalidParameterError("object count range must satisfy 2 <= min <= max <= 12")

    @classmethod
    def shape_color(cls, **kw) -> "RenderSpace":
        kw.setdefault("height", 32)
        kw.setdefault("width", 32)
        return cls(task="ShapeColor", **kw)

    @classmethod
    def grid_spawn(cls, **kw) -> "RenderSpace":
        kw.setdefault("height", 64)
        kw.setdefault("width", 64)
        return cls(task="GridSpawn", **kw)

    @property
    def factor_sizes(self) -> tuple[int, ...]:
        """Sizes of the discrete factors, in enumeration order.

        For GridSpawn this is the single-placement space (row, col, class).
        """
        if self.task == "ShapeColor":
            return (len(SHAPES), len(MATERIALS), len(self.palette), len(self.size_radii))
        return (self.grid_rows, self.grid_cols, self.n_classes)

    @property
    def cardinality(self) -> int:
        return math.prod(self.factor_sizes)

    @property
    def n_pixels(self) -> int:
        return self.height * self.width * 3

    @property
    def n_cells(self) -> int:
        return self.grid_rows * self.grid_cols


@dataclass(frozen=True)
class ShapeParams:
    shape: int
    material: int
    color_idx: int
    size_idx: int
    noise_seed: int = 0

    @property
    def theta(self) -> tuple[int, int, int, int]:
        return (self.shape, self.material, self.color_idx, self.size_idx)


@dataclass(frozen=True)
class GridSceneParams:
    placements: tuple  # of (row, col, class_idx)
    noise_seed: int = 0


@dataclass
class LabeledSample:
    image: np.ndarray  # (H, W, 3) float64 in [0, 1]
    label: object  # int for ShapeColor, (R, C) int array for GridSpawn


def enumerate_theta(space: RenderSpace) -> list[tuple[int, ...]]:
    """All discrete parameter tuples in lexicographic order."""
    return list(itertools.product(*(range(n) for n in space.factor_sizes)))


def theta_to_cell(space: RenderSpace, theta: Sequence[int]) -> int:
    return int(np.ravel_multi_index(tuple(theta), space.factor_sizes))


def cell_to_theta(space: RenderSpace, cell: int) -> tuple[int, ...]:
    return tuple(int(i) for i in np.unravel_index(int(cell), space.factor_sizes))


# ---------------------------------------------------------------------------
# rasterization helpers

def _pixel_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return ys + 0.5, xs + 0.5


def _shape_mask(shape: int, dy: np.ndarray, dx: np.ndarray, r: float) -> np.ndarray:
    # square and triangle have the same area as the circle of radius r
    if shape == 0:
        return dy * dy + dx * dx <= r * r
    if shape == 1:
        half = r * math.sqrt(math.pi) / 2.0
        return np.maximum(np.abs(dx), np.abs(dy)) <= half
    circum = r * math.sqrt(4.0 * math.pi / (3.0 * math.sqrt(3.0)))
    return (dy <= circum / 2.0) & (np.abs(dx) * math.sqrt(3.0) <= dy + circum)


def _validate_shape(p: ShapeParams, space: RenderSpace) -> None:
    if space.task != "ShapeColor":
        raise InvalidParameterError("render_shape needs a ShapeColor space")
    for name, value, n in zip(("shape", "material", "color_idx", "size_idx"), p.theta, space.factor_sizes):
        if not (isinstance(value, (int, np.integer)) and 0 <= value < n):
            raise InvalidParameterError(f"{name}={value!r} outside [0, {n})")


def render_shape(p: ShapeParams, space: RenderSpace) -> LabeledSample:
    _validate_shape(p, space)
    h, w = space.height, space.width
    rng = np.random.default_rng(int(p.noise_seed))
    # fixed draw order so every config consumes the stream identically
    u = rng.uniform(-1.0, 1.0, size=5)
    pix = rng.standard_normal((h, w, 3))

    cy = h / 2.0 + space.position_jitter * u[0]
    cx = w / 2.0 + space.position_jitter * u[1]
    r = space.size_radii[p.size_idx] * (1.0 + space.size_jitter * u[2])
    ys, xs = _pixel_grid(h, w)
    dy, dx = ys - cy, xs - cx
    mask = _shape_mask(int(p.shape), dy, dx, r)

    if p.material == 1:
        off = 0.35 * r
        dist = np.sqrt((dy + off) ** 2 + (dx + off) ** 2) / (1.5 * r)
        shade = 1.0 - 0.6 * np.clip(dist, 0.0, 1.0)
    else:
        shade = np.ones((h, w))

    base = np.asarray(space.palette[p.color_idx], dtype=np.float64)
    light = 1.0 + space.light_jitter * u[3]
    # darkening only: hue ratios survive and nothing clips, so every cell stays learnable
    gain = math.exp(-space.hardness * p.size_idx * (1.0 + u[4]))
    color = shade[..., None] * base * (light * gain)
    img = np.where(mask[..., None], color, 0.0) + space.pixel_noise * pix
    return LabeledSample(np.clip(img, 0.0, 1.0), int(p.color_idx))


def decode_dominant_color(image: np.ndarray, palette: Sequence = DEFAULT_PALETTE, threshold: float = 0.02) -> int:
    """Index of the palette hue closest to the mean foreground color.

    Foreground is every pixel whose brightest channel exceeds ``threshold``.
    Distance is the residual after the best positive rescaling of each palette
    entry, so shading and global lighting do not change the answer.
    """
    fg = image.reshape(-1, 3)
    fg = fg[fg.max(axis=1) > threshold]
    if len(fg) == 0:
        raise InvalidParameterError("image has no foreground pixels")
    c = fg.mean(axis=0)
    pal = np.asarray(palette, dtype=np.float64)
    scale = np.clip(pal @ c / np.einsum("ij,ij->i", pal, pal), 0.0, None)
    resid = np.linalg.norm(c[None, :] - scale[:, None] * pal, axis=1)
    return int(np.argmin(resid))


def _validate_grid(p: GridSceneParams, space: RenderSpace) -> None:
    if space.task != "GridSpawn":
        raise InvalidParameterError("render_grid_scene needs a GridSpawn space")
    n = len(p.placements)
    if not 2 <= n <= 12:
        raise InvalidParameterError(f"scene must hold 2..12 placements, got {n}")
    seen = set()
    for pl in p.placements:
        if len(pl) != 3:
            raise InvalidParameterError(f"placement {pl!r} is not (row, col, class)")
        r, c, k = pl
        if not (0 <= r < space.grid_rows and 0 <= c < space.grid_cols and 0 <= k < space.n_classes):
            raise InvalidParameterError(f"placement {pl!r} out of range")
        if (r, c) in seen:
            raise InvalidParameterError(f"two placements share cell ({r}, {c})")
        seen.add((r, c))


def footprint_scale(space: RenderSpace, row: int) -> float:
    """Linear perspective: 1 at the nearest row, ``1 - shrink`` at the farthest."""
    if space.grid_rows == 1:
        return 1.0
    return 1.0 - space.perspective_shrink * row / (space.grid_rows - 1)


def _half_extent(space: RenderSpace, k: int, scale: float) -> tuple[float, float]:
    ch, cw = space.height / space.grid_rows, space.width / space.grid_cols
    if k % 2 == 0:  # wide box (car-like)
        return 0.25 * ch * scale, 0.42 * cw * scale
    return 0.42 * ch * scale, 0.16 * cw * scale  # tall box (person-like)


def render_grid_scene(p: GridSceneParams, space: RenderSpace) -> LabeledSample:
    _validate_grid(p, space)
    h, w = space.height, space.width
    ch, cw = h / space.grid_rows, w / space.grid_cols
    rng = np.random.default_rng(int(p.noise_seed))
    ys, xs = _pixel_grid(h, w)
    # ground gets brighter toward the horizon
    img = np.repeat((space.background * (1.0 + 0.25 * (1.0 - ys / h)))[..., None], 3, axis=2)
    label = np.full((space.grid_rows, space.grid_cols), EMPTY, dtype=np.int64)

    for r, c, k in p.placements:
        u = rng.uniform(-1.0, 1.0, size=3)
        rgb = rng.uniform(0.45, 1.0, size=3)
        s = footprint_scale(space, r) * (1.0 + 0.5 * space.size_jitter * u[2])
        hh, hw = _half_extent(space, k, s)
        # row 0 is the band at the bottom of the image
        top = h - (r + 1) * ch
        cy = top + ch / 2.0 + u[0] * max(ch / 2.0 - hh, 0.0)
        cx = c * cw + cw / 2.0 + u[1] * max(cw / 2.0 - hw, 0.0)
        mask = (np.abs(ys - cy) <= hh) & (np.abs(xs - cx) <= hw)
        img[mask] = rgb
        label[r, c] = k + 1

    img = img + space.pixel_noise * rng.standard_normal((h, w, 3))
    return LabeledSample(np.clip(img, 0.0, 1.0), label)


def decode_occupancy(label: np.ndarray) -> frozenset:
    """Placement set ``{(row, col, class)}`` encoded by an occupancy grid."""
    rows, cols = np.nonzero(label != EMPTY)
    return frozenset((int(r), int(c), int(label[r, c]) - 1) for r, c in zip(rows, cols))


# ---------------------------------------------------------------------------
# simulators: the g in (x, y) = g(theta), with render accounting


class ShapeColorSimulator:
    """Maps a discrete cell index (0..251) plus a noise seed to a sample."""

    def __init__(self, space: RenderSpace | None = None, workers: int = 1):
        self.space = space or RenderSpace.shape_color()
        if self.space.task != "ShapeColor":
            raise InvalidParameterError("ShapeColorSimulator needs a ShapeColor space")
        self.workers = workers
        self.render_calls = 0

    @property
    def n_cells(self) -> int:
        return self.space.cardinality

    def params(self, cell: int, seed: int) -> ShapeParams:
        return ShapeParams(*cell_to_theta(self.space, cell), noise_seed=seed)

    def render(self, cell: int, seed: int) -> LabeledSample:
        self.render_calls += 1
        return render_shape(self.params(cell, seed), self.space)

    def render_batch(self, cells: Sequence[int], seeds: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """Render many cells; returns flattened images (n, H*W*3) and labels (n,)."""
        samples = _map(lambda cs: self.render(*cs), zip(cells, seeds), self.workers)
        x = np.stack([s.image.reshape(-1) for s in samples]) if samples else np.zeros((0, self.space.n_pixels))
        y = np.array([s.label for s in samples], dtype=np.int64)
        return x, y

    def target_cells(self, shape: str | int | None = "circle") -> list[int]:
        """Cells with the shape factor frozen (all cells if ``shape`` is None)."""
        if shape is None:
            return list(range(self.n_cells))
        s = SHAPES.index(shape) if isinstance(shape, str) else int(shape)
        return [i for i, th in enumerate(enumerate_theta(self.space)) if th[0] == s]


class GridSpawnSimulator:
    """Maps a tuple of single-placement cells (row, col, class) to a scene."""

    def __init__(self, space: RenderSpace | None = None, workers: int = 1):
        self.space = space or RenderSpace.grid_spawn()
        if self.space.task != "GridSpawn":
            raise InvalidParameterError("GridSpawnSimulator needs a GridSpawn space")
        self.workers = workers
        self.render_calls = 0

    @property
    def n_cells(self) -> int:
        return self.space.cardinality

    def params(self, cells: Iterable[int], seed: int) -> GridSceneParams:
        return GridSceneParams(tuple(cell_to_theta(self.space, c) for c in cells), noise_seed=seed)

    def render(self, cells: Iterable[int], seed: int) -> LabeledSample:
        self.render_calls += 1
        return render_grid_scene(self.params(cells, seed), self.space)

    def render_batch(self, draws: Sequence[Sequence[int]], seeds: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        samples = _map(lambda cs: self.render(*cs), zip(draws, seeds), self.workers)
        x = np.stack([s.image.reshape(-1) for s in samples]) if samples else np.zeros((0, self.space.n_pixels))
        y = np.stack([s.label.reshape(-1) for s in samples]) if samples else np.zeros((0, self.space.n_cells), np.int64)
        return x, y


def make_simulator(space: RenderSpace, workers: int = 1):
    if space.task == "ShapeColor":
        return ShapeColorSimulator(space, workers)
    return GridSpawnSimulator(space, workers)


def _map(fn, items, workers: int) -> list:
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))  # map preserves input order


def sample_seeds(master: int, *keys, n: int) -> list[int]:
    """Per-sample noise seeds ``derive_seed(master, *keys, i)`` for i < n."""
    return [derive_seed(master, *keys, i) for i in range(n)]


# ---------------------------------------------------------------------------
# file formats


def to_bytes(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6, max value 255."""
    data = to_bytes(image)
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, w, h, maxval, body = raw.split(maxsplit=4)
    if magic != b"P6" or int(maxval) != 255:
        raise InvalidParameterError(f"{path}: not an 8-bit P6 file")
    return np.frombuffer(body, dtype=np.uint8).reshape(int(h), int(w), 3)


def write_labels_csv(path, labels: Sequence, space: RenderSpace) -> None:
    """One row per sample: ``sample,label`` or ``sample,r0c0,r0c1,...``."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        if space.task == "ShapeColor":
            wr.writerow(["sample", "color_idx"])
            for i, lab in enumerate(labels):
                wr.writerow([i, int(lab)])
        else:
            wr.writerow(["sample"] + [f"r{r}c{c}" for r in range(space.grid_rows) for c in range(space.grid_cols)])
            for i, lab in enumerate(labels):
                wr.writerow([i] + [int(v) for v in np.asarray(lab).reshape(-1)])
