"""Training loops, synthetic data, loss-landscape slices, gradient histograms
and the on-disk formats used by the command-line tool."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from channorm.autograd import grad_reverse, loss
from channorm.channel_norm import NormMode
from channorm.networks import (
    FAMILIES,
    KernelStack,
    NetworkSpec,
    check_stack,
    flatten,
    layer_norms,
    trainable_blocks,
    unflatten,
)
from channorm.phantom import make_phantom

__all__ = [
    "DataTable",
    "Diverged",
    "HistogramTable",
    "LandscapeSlice",
    "TrainConfig",
    "TrainTrace",
    "emit_dat",
    "grad_histogram",
    "init_stack",
    "load_weights",
    "make_input",
    "make_phantom",
    "make_step_target",
    "read_dat",
    "run_training",
    "save_weights",
    "slice_landscape",
]

DIVERGENCE_LOSS = 1e12
INIT_SCHEMES = ("gaussian", "unit", "sigma", "fanin")


class Diverged(RuntimeError):
    """Training loss exceeded the divergence threshold; ``trace`` holds the rows so far."""

    def __init__(self, trace: "TrainTrace", step: int, value: float):
        super().__init__(f"loss {value!r} at step {step} exceeds {DIVERGENCE_LOSS:g}")
        self.trace = trace
        self.step = step
        self.value = value


# ---------------------------------------------------------------------------
# configuration and traces


@dataclass(frozen=True)
class TrainConfig:
    """Plain gradient descent with a fixed step size.

    ``init`` is one of ``gaussian`` (variance ``1/(n p C)`` with ``n`` the
    number of positions, ``p`` the taps per channel and ``C`` the input
    channels), ``unit`` (variance 1), ``sigma`` (standard deviation
    ``sigma``) or ``fanin`` (variance ``1/(3 fan_in)``).  Training stops
    early once the loss drops below ``stop_below`` when that is given.
    """

    spec: NetworkSpec
    eta: float
    steps: int
    seed: int = 0
    init: str = "gaussian"
    sigma: float | None = None
    record_stride: int = 1
    stop_below: float | None = None

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.record_stride < 1:
            raise ValueError("record_stride must be at least 1")
        if self.init not in INIT_SCHEMES:
            raise ValueError(f"unknown init scheme {self.init!r}")
        if self.init == "sigma" and not (self.sigma is not None and self.sigma > 0):
            raise ValueError("init 'sigma' needs a positive sigma")


@dataclass
class TrainTrace:
    """Rows of ``(step, loss, per-layer gradient norms, distance from init)``."""

    layers: int
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    grad_norms: list[np.ndarray] = field(default_factory=list)
    distances: list[float] = field(default_factory=list)
    stop_reason: str = "completed"
    final: KernelStack | None = None

    def record(self, step: int, value: float, norms, distance: float) -> None:
        norms = np.asarray(norms, dtype=np.float64)
        if norms.shape != (self.layers,):
            raise ValueError(f"expected {self.layers} gradient norms, got {norms.shape}")
        if self.steps and step <= self.steps[-1]:
            raise ValueError("trace rows must have increasing steps")
        self.steps.append(int(step))
        self.losses.append(float(value))
        self.grad_norms.append(norms)
        self.distances.append(float(distance))

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    def norms_array(self) -> np.ndarray:
        return np.array(self.grad_norms).reshape(len(self), self.layers)

    def to_table(self) -> "DataTable":
        columns = ("step", "loss") + tuple(f"grad_{i + 1}" for i in range(self.layers))
        rows = np.column_stack([np.array(self.steps, dtype=np.float64), self.losses, self.norms_array()])
        return DataTable(columns, rows.reshape(len(self), len(columns)), [f"stop: {self.stop_reason}"])


@dataclass
class DataTable:
    """Named columns of float data plus free-form header comments."""

    columns: tuple[str, ...]
    rows: np.ndarray
    comments: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.columns = tuple(self.columns)
        self.rows = np.asarray(self.rows, dtype=np.float64).reshape(-1, len(self.columns))

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.columns.index(name)]


# ---------------------------------------------------------------------------
# data


def make_step_target(n: int, level_low: float = 0.0, level_high: float = 1.0, split: int | None = None,
                     centered: bool = False) -> np.ndarray:
    """Step signal: the first ``split`` entries at ``level_low``, the rest at ``level_high``."""
    split = n // 2 if split is None else split
    if not 0 < split < n:
        raise ValueError("split must satisfy 0 < split < n")
    y = np.full(n, float(level_high))
    y[:split] = level_low
    if centered:
        y -= y.mean()
    return y


def make_input(spec: NetworkSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform ``[0, 1)`` input of the family's shape.

    The single-channel input is centered, as the normalized linear network
    assumes a zero-mean input.
    """
    x = rng.uniform(size=spec.input_shape)
    if spec.family == "linear1c":
        x -= x.mean()
    return x


def default_target(spec: NetworkSpec) -> np.ndarray:
    if spec.family == "gen2d":
        return make_phantom(spec.n)
    return make_step_target(spec.n, centered=spec.family == "linear1c")


# ---------------------------------------------------------------------------
# initialization and training


def _taps(spec: NetworkSpec) -> int:
    return spec.kernel**2 if spec.family == "gen2d" else spec.kernel


def init_stack(spec: NetworkSpec, scheme: str = "gaussian", rng: np.random.Generator | None = None,
               sigma: float | None = None) -> KernelStack:
    """Random weights; normalization parameters start at ``gamma = 1, beta = 0``.

    The linear network's output scale starts at 1.  The mixing layer of the
    multi-channel families is drawn like a kernel with a single tap.
    """
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(0) if rng is None else rng
    C, taps = spec.channels, _taps(spec)

    def std(fan: int, positions: bool = True) -> float:
        if scheme == "gaussian":
            return 1.0 / np.sqrt(fan * (spec.positions if positions else 1))
        if scheme == "unit":
            return 1.0
        if scheme == "sigma":
            if sigma is None or not sigma > 0:
                raise ValueError("init 'sigma' needs a positive sigma")
            return float(sigma)
        return 1.0 / np.sqrt(3.0 * fan)

    if spec.family == "linear1c":
        kernels = []
        for _ in range(spec.depth):
            w = np.zeros(spec.n)
            w[: spec.kernel] = rng.normal(0.0, std(taps), spec.kernel)
            kernels.append(w)
        return KernelStack.linear(kernels, 1.0)
    shape = (C, C) + ((spec.kernel, spec.kernel) if spec.family == "gen2d" else (spec.kernel,))
    kernels = [rng.normal(0.0, std(C * taps), shape) for _ in range(spec.depth)]
    return KernelStack(kernels, rng.normal(0.0, std(C), C))


def _distance(spec, stack, start) -> float:
    return float(np.linalg.norm(flatten(spec, stack) - start))


def run_training(cfg: TrainConfig, x, y, stack: KernelStack | None = None) -> TrainTrace:
    """Fixed-step gradient descent on the trainable parameters.

    A row is recorded at step 0, every ``record_stride`` steps and at the last
    step.  Kernel updates never touch entries outside the support because the
    gradients there are exactly zero.  Raises :class:`Diverged` when the loss
    exceeds ``1e12`` or is not finite.
    """
    spec = cfg.spec
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if stack is None:
        stack = init_stack(spec, cfg.init, np.random.default_rng(cfg.seed), cfg.sigma)
    else:
        stack = stack.copy()
    check_stack(spec, stack)
    learned = spec.norm is NormMode.LEARNED
    train_scale = spec.family != "linear1c" or spec.norm.normalizes
    start = flatten(spec, stack)
    trace = TrainTrace(layers=len(trainable_blocks(spec)))
    eta = cfg.eta
    for step in range(cfg.steps + 1):
        value, grads = grad_reverse(spec, stack, x, y)
        if not np.isfinite(value) or value > DIVERGENCE_LOSS:
            trace.stop_reason = "diverged"
            trace.final = stack
            raise Diverged(trace, step, value)
        last = step == cfg.steps
        reached = cfg.stop_below is not None and value < cfg.stop_below
        if step % cfg.record_stride == 0 or last or reached:
            trace.record(step, value, layer_norms(spec, grads), _distance(spec, stack, start))
        if reached:
            trace.stop_reason = "target"
            break
        if last:
            break
        for i in range(spec.depth):
            stack.kernels[i] -= eta * grads.kernels[i]
            if learned:
                stack.gamma[i] -= eta * grads.gamma[i]
                stack.beta[i] -= eta * grads.beta[i]
        if train_scale:
            stack.out_scale = stack.out_scale - eta * grads.out_scale
    trace.final = stack
    return trace


# ---------------------------------------------------------------------------
# landscape and gradient statistics


@dataclass
class LandscapeSlice:
    """Loss on the plane ``center + a*u + b*v``; ``grid[i, j]`` is at ``(offsets[i], offsets[j])``."""

    center_loss: float
    offsets: np.ndarray
    grid: np.ndarray
    directions: np.ndarray

    @property
    def loss_range(self) -> float:
        return float(self.grid.max() - self.grid.min())

    def to_table(self) -> DataTable:
        a, b = np.meshgrid(self.offsets, self.offsets, indexing="ij")
        rows = np.column_stack([a.ravel(), b.ravel(), self.grid.ravel()])
        return DataTable(("a", "b", "loss"), rows, [f"center_loss: {self.center_loss!r}", f"range: {self.loss_range!r}"])


def random_plane(size: int, rng: np.random.Generator) -> np.ndarray:
    """Two orthonormal directions from Gram-Schmidt on Gaussian draws."""
    if size < 2:
        raise ValueError("need at least two coordinates for a plane")
    u, v = rng.standard_normal((2, size))
    u /= np.linalg.norm(u)
    v -= np.dot(v, u) * u
    v /= np.linalg.norm(v)
    return np.stack([u, v])


def slice_landscape(center: KernelStack, spec: NetworkSpec, x, y, extent: float, resolution: int,
                    seed: int = 0) -> LandscapeSlice:
    """Evaluate the loss on a ``resolution x resolution`` grid spanning ``[-extent, extent]^2``."""
    if resolution < 3 or resolution % 2 == 0:
        raise ValueError("resolution must be odd and at least 3")
    if not extent > 0:
        raise ValueError("extent must be positive")
    check_stack(spec, center)
    base = flatten(spec, center)
    directions = random_plane(base.size, np.random.default_rng(seed))
    offsets = np.linspace(-extent, extent, resolution)
    offsets[resolution // 2] = 0.0
    grid = np.empty((resolution, resolution))
    for i, a in enumerate(offsets):
        for j, b in enumerate(offsets):
            point = unflatten(spec, center, base + a * directions[0] + b * directions[1])
            grid[i, j] = loss(spec, point, x, y)
    return LandscapeSlice(float(grid[resolution // 2, resolution // 2]), offsets, grid, directions)


@dataclass
class HistogramTable:
    """Counts of the full-gradient norm at initialization over logarithmic bins.

    Exactly-zero norms (all units of some layer inactive) cannot sit on a log
    axis; they are counted in ``zero_count`` and emitted as a leading bin with
    center 0, so the emitted counts always sum to the number of trials.
    """

    edges: np.ndarray
    counts: np.ndarray
    norms: np.ndarray

    @property
    def zero_count(self) -> int:
        return int(np.sum(self.norms == 0))

    @property
    def centers(self) -> np.ndarray:
        return np.sqrt(self.edges[:-1] * self.edges[1:])

    def tail_ratio(self, q: float = 99.0) -> float:
        """Ratio of the ``q``-th percentile to the median."""
        return float(np.percentile(self.norms, q) / np.median(self.norms))

    def to_table(self) -> DataTable:
        centers, counts = self.centers, self.counts
        if self.zero_count:
            centers = np.concatenate([[0.0], centers])
            counts = np.concatenate([[self.zero_count], counts])
        return DataTable(("center", "count"), np.column_stack([centers, counts]), [f"trials: {self.norms.size}"])


def gradient_norms_at_init(spec: NetworkSpec, x, y, trials: int, seed: int = 0, init: str = "gaussian",
                           sigma: float | None = None) -> np.ndarray:
    """``||grad||`` over the trainable parameters for ``trials`` fresh initializations."""
    norms = np.empty(trials)
    for t in range(trials):
        stack = init_stack(spec, init, np.random.default_rng([seed, t]), sigma)
        _, grads = grad_reverse(spec, stack, x, y)
        norms[t] = np.linalg.norm(layer_norms(spec, grads))
    return norms


def grad_histogram(spec: NetworkSpec, x, y, trials: int, bins: int = 40, seed: int = 0,
                   init: str = "gaussian", sigma: float | None = None) -> HistogramTable:
    """Histogram of gradient norms at initialization with log-spaced bins over the observed range."""
    if trials < 100:
        raise ValueError("need at least 100 trials")
    if bins < 1:
        raise ValueError("bins must be positive")
    norms = gradient_norms_at_init(spec, x, y, trials, seed, init, sigma)
    positive = norms[norms > 0]
    if positive.size == 0:
        return HistogramTable(np.array([]), np.array([], dtype=np.int64), norms)
    lo, hi = positive.min(), positive.max()
    if hi == lo:
        hi = lo * (1 + 1e-12)
    edges = np.geomspace(lo, hi, bins + 1)
    counts, _ = np.histogram(positive, edges)
    return HistogramTable(edges, counts, norms)


# ---------------------------------------------------------------------------
# text data files


def _format(v: float) -> str:
    return format(float(v), ".17g")


def emit_dat(data, path) -> Path:
    """Write a trace or table as ``#``-commented whitespace-separated text.

    The first column is the row index; values are written with 17 significant
    digits so that parsing restores them exactly.
    """
    table = data.to_table() if hasattr(data, "to_table") else data
    if not isinstance(table, DataTable):
        raise TypeError("emit_dat expects a TrainTrace, a table-like object or a DataTable")
    path = Path(path)
    lines = [f"# {c}" for c in table.comments]
    lines.append("# " + " ".join(("row",) + table.columns))
    for i, row in enumerate(table.rows):
        lines.append(" ".join([str(i)] + [_format(v) for v in row]))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_dat(path) -> DataTable:
    comments, header, rows = [], None, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            comments.append(line[1:].strip())
        elif line.strip():
            rows.append([float(v) for v in line.split()])
    if not comments:
        raise ValueError("missing column header")
    header = comments.pop().split()
    if header[0] != "row":
        raise ValueError("first column must be the row index")
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    if not np.array_equal(data[:, 0], np.arange(len(rows))):
        raise ValueError("row index column is not 0, 1, 2, ...")
    return DataTable(tuple(header[1:]), data[:, 1:], comments)


# ---------------------------------------------------------------------------
# binary weights


WEIGHTS_MAGIC = b"CHNRMWTS"
WEIGHTS_VERSION = 1
_HEADER = struct.Struct("<8s6I")
_NORM_MODES = (NormMode.NONE, NormMode.FIXED, NormMode.LEARNED)


def _all_parameters(stack: KernelStack) -> list[np.ndarray]:
    return list(stack.kernels) + [stack.out_scale] + list(stack.gamma) + list(stack.beta)


def save_weights(path, spec: NetworkSpec, stack: KernelStack, x=None, y=None) -> Path:
    """Binary weights: 32-byte header then little-endian float64 payload.

    Header fields: magic, version, family tag (family index in the low byte,
    norm mode in the next byte), d, n, p, channels.  The payload holds every
    kernel, the output layer, gamma and beta, followed by the training input
    and target when both are given.
    """
    check_stack(spec, stack)
    has_data = x is not None and y is not None
    tag = FAMILIES.index(spec.family) | (_NORM_MODES.index(spec.norm) << 8) | (int(has_data) << 16)
    header = _HEADER.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION, tag, spec.depth, spec.n, spec.kernel, spec.channels)
    parts = [p.ravel() for p in _all_parameters(stack)]
    if has_data:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.shape != spec.input_shape or y.shape != spec.output_shape:
            raise ValueError("x/y do not match the network shapes")
        parts += [x.ravel(), y.ravel()]
    path = Path(path)
    path.write_bytes(header + np.concatenate(parts).astype("<f8").tobytes())
    return path


def load_weights(path) -> tuple[NetworkSpec, KernelStack, np.ndarray | None, np.ndarray | None]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError("file too short for a weights header")
    magic, version, tag, d, n, p, channels = _HEADER.unpack_from(raw)
    if magic != WEIGHTS_MAGIC:
        raise ValueError("not a weights file")
    if version != WEIGHTS_VERSION:
        raise ValueError(f"unsupported weights version {version}")
    spec = NetworkSpec(FAMILIES[tag & 0xFF], n=n, depth=d, kernel=p, channels=channels,
                       norm=_NORM_MODES[(tag >> 8) & 0xFF])
    template = init_stack(spec, "unit")
    payload = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    arrays = _all_parameters(template)
    expected = sum(a.size for a in arrays)
    has_data = bool(tag >> 16 & 1)
    data_size = int(np.prod(spec.input_shape) + np.prod(spec.output_shape)) if has_data else 0
    if payload.size != expected + data_size:
        raise ValueError(f"payload has {payload.size} values, expected {expected + data_size}")
    offset, values = 0, []
    for a in arrays:
        values.append(payload[offset : offset + a.size].reshape(a.shape))
        offset += a.size
    d = spec.depth
    stack = KernelStack(values[:d], values[d], values[d + 1 : 2 * d + 1], values[2 * d + 1 :])
    x = y = None
    if has_data:
        size = int(np.prod(spec.input_shape))
        x = payload[offset : offset + size].reshape(spec.input_shape)
        y = payload[offset + size :].reshape(spec.output_shape)
    return spec, stack, x, y


def depth_list(text: str | Sequence[int]) -> list[int]:
    if isinstance(text, str):
        return [int(v) for v in text.split(",") if v]
    return [int(v) for v in text]
