"""Fourier-domain analysis of deep single-channel linear circulant networks.

All quantities use the unitary DFT of :mod:`channorm.circulant`:
``f_j^H s`` is entry ``j`` of ``np.fft.ifft(s, norm="ortho")``.  The loss
``0.5 ||y - prod_i W_i x||^2`` splits into one scalar deep linear problem per
frequency,

    D_j(v) = f_j^H y - n^{d/2} (prod_i f_j^H v_i) f_j^H x,

and ``L(v) = 0.5 ||D(v)||^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from channorm.autograd import grad_reverse, loss_value
from channorm.channel_norm import NormMode
from channorm.circulant import idft
from channorm.experiments import TrainTrace
from channorm.networks import KernelStack, NetworkSpec, forward_linear_plain, layer_norms


class VNotInBall(ValueError):
    """The probe point lies outside the ball around the center."""


def _kernels(stack: KernelStack) -> np.ndarray:
    return np.stack(stack.kernels)


def _support_norms(stack: KernelStack) -> np.ndarray:
    return np.linalg.norm(_kernels(stack), axis=1)


# ---------------------------------------------------------------------------
# Fourier factorization


@dataclass(frozen=True)
class FourierLossTerms:
    residuals: np.ndarray

    @property
    def total(self) -> float:
        return 0.5 * float(np.sum(np.abs(self.residuals) ** 2))


def fourier_residuals(stack: KernelStack, x, y) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    kernels = _kernels(stack)
    n = x.size
    if x.ndim != 1 or y.shape != x.shape or kernels.shape[1] != n:
        raise ValueError("x, y and every kernel must be vectors of the same length")
    d = kernels.shape[0]
    prod = np.prod(np.fft.ifft(kernels, axis=1, norm="ortho"), axis=0)
    return idft(y) - n ** (d / 2) * prod * idft(x)


def fourier_loss(stack: KernelStack, x, y) -> FourierLossTerms:
    """Per-frequency residuals ``D_j`` of the unnormalized linear network."""
    return FourierLossTerms(fourier_residuals(stack, x, y))


# ---------------------------------------------------------------------------
# gradient bound inside a ball


@dataclass(frozen=True)
class BallProbe:
    """Ball of radius ``radius`` around ``center`` with its constants ``alpha`` and ``delta``.

    ``alpha = max_k prod_{i != k} ||w_i||`` and ``delta = min_i ||w_i||`` are
    computed from the center.
    """

    center: KernelStack
    radius: float
    p: int

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if np.any(_kernels(self.center)[:, self.p :] != 0):
            raise ValueError("center kernels have entries outside the support")

    @property
    def norms(self) -> np.ndarray:
        return _support_norms(self.center)

    @property
    def alpha(self) -> float:
        norms = self.norms
        return float(max(np.prod(np.delete(norms, k)) for k in range(norms.size)))

    @property
    def delta(self) -> float:
        return float(self.norms.min())

    def distance(self, v: KernelStack) -> float:
        return float(np.linalg.norm(_kernels(v) - _kernels(self.center)))

    def contains(self, v: KernelStack) -> bool:
        return self.distance(v) <= self.radius


def sample_in_ball(probe: BallProbe, rng: np.random.Generator) -> KernelStack:
    """Uniform point of the ball over the ``d * p`` support coordinates."""
    p = probe.p
    center = _kernels(probe.center)
    d = center.shape[0]
    direction = rng.standard_normal((d, p))
    direction /= np.linalg.norm(direction)
    radius = probe.radius * rng.uniform() ** (1.0 / (d * p))
    v = center.copy()
    v[:, :p] += radius * direction
    return KernelStack.linear(list(v), probe.center.out_scale)


class BoundCheck(NamedTuple):
    bound: float
    grad_norm: float
    product_norm: float
    product_bound: float

    @property
    def holds(self) -> bool:
        """Both inequalities, with a relative slack of 1e-12 for rounding."""
        return (self.grad_norm <= self.bound * (1 + 1e-12)
                and self.product_norm <= self.product_bound * (1 + 1e-12))


def lemma1_bound(probe: BallProbe, x, y, v: KernelStack) -> BoundCheck:
    """Gradient bound ``n^{d/2} ||D(v)|| ||x|| alpha sqrt(d) exp(sqrt(d) r / delta)`` at ``v``.

    Also returns ``prod_i ||v_i||`` and its bound
    ``alpha exp(sqrt(d) r / delta) max_k ||v_k||``.  Raises
    :class:`VNotInBall` when ``v`` is farther than the radius from the center.
    """
    if not probe.contains(v):
        raise VNotInBall(f"distance {probe.distance(v):.6g} exceeds radius {probe.radius:.6g}")
    x = np.asarray(x, dtype=np.float64)
    kernels = _kernels(v)
    d, n = kernels.shape
    spec = NetworkSpec("linear1c", n=n, depth=d, kernel=probe.p)
    _, grads = grad_reverse(spec, v, x, y)
    grad_norm = float(np.linalg.norm(layer_norms(spec, grads)))
    growth = math.exp(math.sqrt(d) * probe.radius / probe.delta)
    residual = np.linalg.norm(fourier_residuals(v, x, y))
    bound = n ** (d / 2) * residual * np.linalg.norm(x) * probe.alpha * math.sqrt(d) * growth
    norms = np.linalg.norm(kernels, axis=1)
    product = float(np.prod(norms))
    product_bound = probe.alpha * growth * float(norms.max())
    return BoundCheck(float(bound), grad_norm, product, float(product_bound))


# ---------------------------------------------------------------------------
# initialization statistics


def c2_constant(p: int) -> float:
    """``1 - sqrt(2/p) Gamma((p+1)/2) / Gamma(p/2)``."""
    if p < 1:
        raise ValueError("p must be positive")
    return 1.0 - math.sqrt(2.0 / p) * math.exp(math.lgamma((p + 1) / 2) - math.lgamma(p / 2))


def c_constant(p: int) -> float:
    """``c`` with ``exp(-4c) = 1 - c2``."""
    return -0.25 * math.log1p(-c2_constant(p))


def expected_kernel_norm(n: int, p: int) -> float:
    """Mean of ``||w||`` for ``w ~ N(0, I_p / (n p))`` (a scaled chi distribution)."""
    return (1.0 - c2_constant(p)) / math.sqrt(n)


def _default_grid(n: int, p: int) -> np.ndarray:
    return expected_kernel_norm(n, p) * np.linspace(0.05, 1.0, 20)


@dataclass(frozen=True)
class InitStats:
    p: int
    n: int
    analytic_mean: float
    mc_mean: float
    standard_error: float
    c2: float
    t_grid: np.ndarray
    small_ball: np.ndarray

    @property
    def c1(self) -> float:
        """Smallest slope ``c1`` with ``P(||w|| <= t) <= c1 t`` on the grid."""
        return float(np.max(self.small_ball / self.t_grid))

    @property
    def z_score(self) -> float:
        return (self.mc_mean - self.analytic_mean) / self.standard_error


MIN_TRIALS = 10_000


def assumption1_stats(n: int, p: int, trials: int = 100_000, seed: int = 0,
                      t_grid: np.ndarray | None = None) -> InitStats:
    """Monte-Carlo statistics of ``||w||`` for ``w ~ N(0, I_p / (n p))``."""
    if trials < MIN_TRIALS:
        raise ValueError(f"need at least {MIN_TRIALS} trials")
    if n < 1 or p < 1:
        raise ValueError("n and p must be positive")
    rng = np.random.default_rng(seed)
    norms = np.linalg.norm(rng.normal(0.0, 1.0 / math.sqrt(n * p), (trials, p)), axis=1)
    grid = _default_grid(n, p) if t_grid is None else np.asarray(t_grid, dtype=np.float64)
    small_ball = np.searchsorted(np.sort(norms), grid, side="right") / trials
    return InitStats(
        p=p,
        n=n,
        analytic_mean=expected_kernel_norm(n, p),
        mc_mean=float(norms.mean()),
        standard_error=float(norms.std(ddof=1) / math.sqrt(trials)),
        c2=c2_constant(p),
        t_grid=grid,
        small_ball=small_ball,
    )


@dataclass(frozen=True)
class InitConditions:
    """Empirical frequencies of the three initialization conditions."""

    d: int
    trials: int
    c: float
    product: float
    lower: float
    upper: float
    joint: float


def lemma2_frequencies(n: int, p: int, d: int, trials: int = 10_000, seed: int = 0) -> InitConditions:
    """How often a ``N(0, 1/(np))`` initialization satisfies the conditions

    (i) ``max_k prod_{i != k} ||w_i|| <= exp(-2cd) / n^{d/2}``,
    (ii) ``min_i ||w_i|| >= exp(-cd)``, (iii) ``max_i ||w_i|| <= exp(cd)``.
    """
    c = c_constant(p)
    rng = np.random.default_rng(seed)
    norms = np.linalg.norm(rng.normal(0.0, 1.0 / math.sqrt(n * p), (trials, d, p)), axis=2)
    log_norms = np.log(norms)
    # max_k prod_{i != k} = prod / min
    log_alpha = log_norms.sum(axis=1) - log_norms.min(axis=1)
    cond_i = log_alpha <= -2 * c * d - 0.5 * d * math.log(n)
    cond_ii = norms.min(axis=1) >= math.exp(-c * d)
    cond_iii = norms.max(axis=1) <= math.exp(c * d)
    return InitConditions(
        d=d,
        trials=trials,
        c=c,
        product=float(cond_i.mean()),
        lower=float(cond_ii.mean()),
        upper=float(cond_iii.mean()),
        joint=float((cond_i & cond_ii & cond_iii).mean()),
    )


# ---------------------------------------------------------------------------
# escape time


def xavier_stack(n: int, d: int, p: int, rng: np.random.Generator) -> KernelStack:
    kernels = np.zeros((d, n))
    kernels[:, :p] = rng.normal(0.0, 1.0 / math.sqrt(n * p), (d, p))
    return KernelStack.linear(list(kernels), 1.0)


def escape_radius(d: int, p: int, scale: float = 1.0) -> float:
    """``scale * exp(-c d) / sqrt(d)``."""
    return scale * math.exp(-c_constant(p) * d) / math.sqrt(d)


class EscapeResult(NamedTuple):
    steps_in_ball: int
    loss_at_exit: float
    trace: TrainTrace


def escape_time(spec: NetworkSpec, x, y, eta: float, r: float, seed: int = 0, max_steps: int = 10_000,
                target: float | None = None, start: KernelStack | None = None) -> EscapeResult:
    """Run gradient descent from a ``N(0, 1/(np))`` start until it leaves ``B(w0, r)``.

    ``steps_in_ball`` is the first step index whose iterate lies outside the
    ball or whose loss is at most ``target`` (default ``0.01 ||y||^2``), or
    ``max_steps`` when neither happens.  The trace records every step inside
    the ball with its distance from the start; ``trace.stop_reason`` is
    ``exit``, ``target`` or ``max_steps``.
    """
    if spec.family != "linear1c" or spec.norm is not NormMode.NONE:
        raise ValueError("escape_time needs an unnormalized linear1c network")
    if not r > 0:
        raise ValueError("radius must be positive")
    if not eta > 0:
        raise ValueError("eta must be positive")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    target = 0.01 * float(np.dot(y, y)) if target is None else target
    if start is None:
        start = xavier_stack(spec.n, spec.depth, spec.kernel, np.random.default_rng(seed))
    w0 = _kernels(start)
    w = w0.copy()
    trace = TrainTrace(layers=spec.depth)
    trace.stop_reason = "max_steps"
    value = loss_value(spec, forward_linear_plain(start, x), y)[0]
    step = 0
    for step in range(max_steps + 1):
        distance = float(np.linalg.norm(w - w0))
        stack = KernelStack.linear(list(w), 1.0)
        if distance > r:
            trace.stop_reason = "exit"
            value = loss_value(spec, forward_linear_plain(stack, x), y)[0]
            break
        value, grads = grad_reverse(spec, stack, x, y)
        trace.record(step, value, layer_norms(spec, grads), distance)
        if value <= target:
            trace.stop_reason = "target"
            break
        if step == max_steps:
            break
        w -= eta * np.stack(grads.kernels)
    trace.final = KernelStack.linear(list(w), 1.0)
    return EscapeResult(step, float(value), trace)


def residual_lower_bound(stack: KernelStack, x, y) -> float:
    """``max_j |f_j^H y| - n^{d/2} |f_j^H x| prod_i ||v_i||``.

    Since ``|f_j^H v_i| <= ||v_i||``, every residual ``|D_j(v)|`` is at least
    ``|f_j^H y| - n^{d/2} |f_j^H x| prod_i ||v_i||``; a positive value proves
    the loss is bounded away from zero.
    """
    x = np.asarray(x, dtype=np.float64)
    norms = _support_norms(stack)
    n, d = x.size, norms.size
    return float(np.max(np.abs(idft(y)) - n ** (d / 2) * np.abs(idft(x)) * np.prod(norms)))


def suboptimality_check(stack: KernelStack, x, y, tau: float) -> bool:
    """``True`` when the loss at ``stack`` exceeds ``tau``."""
    return fourier_loss(stack, x, y).total > tau


def make_escape_problem(n: int, d: int, p: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Input and a realizable target for the escape-time experiment.

    ``x`` is standard Gaussian and ``y = f(x, w*)`` for unit-Gaussian
    kernels ``w*``; one kernel is rescaled so that ``||y|| = ||x||``.
    """
    x = rng.standard_normal(n)
    star = np.zeros((d, n))
    star[:, :p] = rng.standard_normal((d, p))
    y = forward_linear_plain(KernelStack.linear(list(star)), x)
    return x, y * (np.linalg.norm(x) / np.linalg.norm(y))
