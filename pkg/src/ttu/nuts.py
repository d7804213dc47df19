"""No-U-Turn sampler with dual-averaging step size and windowed diagonal
mass-matrix adaptation.

The trajectory grows by multiplicative doubling; states are selected by
multinomial weighting within the trajectory and termination uses the
generalized no-U-turn criterion on momentum sums, including the
across-subtree checks. Divergences are flagged when the energy error along
the trajectory exceeds 1000.

The target is any callable ``u -> (log_density, gradient)``. Chains are
deterministic given the seed: chain ``c`` draws from a PCG64 stream keyed by
``seed ^ c``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

ENERGY_ERROR_THRESHOLD = 1000.0
INIT_RETRIES = 100
WARMUP_TREEDEPTH_CAP = 8


def _logaddexp(a: float, b: float) -> float:
    if a >= b:
        return a + math.log1p(math.exp(b - a)) if b > -math.inf else a
    return b + math.log1p(math.exp(a - b))


class SamplingError(RuntimeError):
    """Raised when a chain cannot be initialized or adapted."""


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup: int = 3000
    draws: int = 3000
    target_accept: float = 0.90
    max_treedepth: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.warmup < 100:
            raise ValueError("warmup must be >= 100")
        if self.draws < 1:
            raise ValueError("draws must be >= 1")
        if not 0.5 <= self.target_accept < 1.0:
            raise ValueError("target_accept must lie in [0.5, 1)")
        if self.max_treedepth < 1:
            raise ValueError("max_treedepth must be >= 1")


@dataclass
class PosteriorDraws:
    """Retained post-warm-up draws plus per-iteration sampler statistics."""

    param_names: list
    unconstrained: np.ndarray  # [chains, draws, P]
    energy: np.ndarray  # [chains, draws]
    accept_prob: np.ndarray  # [chains, draws]
    tree_depth: np.ndarray  # [chains, draws]
    divergent: np.ndarray  # [chains, draws] bool
    step_size: np.ndarray  # [chains]
    mass_diag: np.ndarray  # [chains, P]
    config: SamplerConfig
    constrained_cache: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_chains(self) -> int:
        return self.unconstrained.shape[0]

    @property
    def n_draws(self) -> int:
        return self.unconstrained.shape[1]

    @property
    def n_params(self) -> int:
        return self.unconstrained.shape[2]

    def flat(self) -> np.ndarray:
        """All retained draws pooled, shape (chains*draws, P)."""
        return self.unconstrained.reshape(-1, self.n_params)

    def constrained(self, transform: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Pooled constrained view computed (and cached) via ``transform``."""
        if self.constrained_cache is None:
            self.constrained_cache = transform(self.flat())
        return self.constrained_cache

    def thinned(self, max_draws: int) -> tuple[np.ndarray, int]:
        """Pooled draws thinned by a uniform stride to at most ``max_draws``."""
        flat = self.flat()
        stride = max(1, int(np.ceil(flat.shape[0] / max_draws)))
        return flat[::stride], stride

    def divergence_count(self) -> int:
        return int(self.divergent.sum())

    def treedepth_saturation(self) -> int:
        return int((self.tree_depth >= self.config.max_treedepth).sum())


class _Tree:
    """One end-to-end trajectory segment under construction."""

    __slots__ = ("theta_m", "r_m", "g_m", "theta_p", "r_p", "g_p", "r_sum",
                 "theta", "logp", "grad", "H", "log_w", "sum_alpha", "n_alpha",
                 "s", "divergent")

    def __init__(self, theta, r, logp, grad, H, log_w, alpha, divergent):
        self.theta_m = theta
        self.r_m = r
        self.g_m = grad
        self.theta_p = theta
        self.r_p = r
        self.g_p = grad
        self.r_sum = r.copy()
        self.theta = theta
        self.logp = logp
        self.grad = grad
        self.H = H
        self.log_w = log_w
        self.sum_alpha = alpha
        self.n_alpha = 1
        self.s = not divergent
        self.divergent = divergent


class _ChainRunner:
    def __init__(self, target, cfg: SamplerConfig, chain: int, n_params: int,
                 init_point=None):
        self.target = target
        self.cfg = cfg
        self.rng = np.random.Generator(np.random.PCG64(cfg.seed ^ chain))
        self.n_params = n_params
        self.inv_mass = np.ones(n_params)
        self._init_point = init_point
        self.theta = None
        self.logp = None
        self.grad = None

    # -- hamiltonian helpers -------------------------------------------------
    def _kinetic(self, r) -> float:
        return 0.5 * float(r @ (self.inv_mass * r))

    def _draw_momentum(self) -> np.ndarray:
        return self.rng.standard_normal(self.n_params) / np.sqrt(self.inv_mass)

    def _leapfrog(self, theta, r, grad, eps):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            r1 = r + 0.5 * eps * grad
            theta1 = theta + eps * self.inv_mass * r1
            if not np.isfinite(theta1).all():
                return theta1, r1, -math.inf, grad
            logp1, grad1 = self.target(theta1)
            if not (math.isfinite(logp1) and np.isfinite(grad1).all()):
                return theta1, r1, -math.inf, grad1
            r1 = r1 + 0.5 * eps * grad1
        return theta1, r1, logp1, grad1

    # -- initialization ------------------------------------------------------
    def initialize(self):
        if self._init_point is not None:
            logp, grad = self.target(self._init_point)
            if np.isfinite(logp) and np.all(np.isfinite(grad)):
                self.theta, self.logp, self.grad = np.asarray(
                    self._init_point, dtype=float), logp, np.asarray(grad, dtype=float)
                return
            raise SamplingError("supplied initial point has non-finite target")
        for _ in range(INIT_RETRIES):
            theta = self.rng.uniform(-2.0, 2.0, self.n_params)
            logp, grad = self.target(theta)
            if np.isfinite(logp) and np.all(np.isfinite(grad)):
                self.theta, self.logp, self.grad = theta, logp, np.asarray(grad, dtype=float)
                return
        raise SamplingError(
            f"no finite initialization found in {INIT_RETRIES} attempts")

    def find_reasonable_epsilon(self) -> float:
        eps = 1.0
        r = self._draw_momentum()
        H0 = self._kinetic(r) - self.logp
        _, r1, logp1, _ = self._leapfrog(self.theta, r, self.grad, eps)
        dH = H0 - (self._kinetic(r1) - logp1) if np.isfinite(logp1) else -np.inf
        direction = 1 if dH > np.log(0.5) else -1
        for _ in range(100):
            eps *= 2.0 ** direction
            if not 1e-10 < eps < 1e7:
                break
            _, r1, logp1, _ = self._leapfrog(self.theta, r, self.grad, eps)
            dH = H0 - (self._kinetic(r1) - logp1) if np.isfinite(logp1) else -np.inf
            if (direction == 1 and dH <= np.log(0.5)) or \
               (direction == -1 and dH >= np.log(0.5)):
                break
        return float(np.clip(eps, 1e-10, 1e7))

    # -- trajectory construction ----------------------------------------------
    def _leaf(self, theta, r, grad, eps, direction, H0) -> _Tree:
        theta1, r1, logp1, grad1 = self._leapfrog(theta, r, grad, direction * eps)
        H1 = self._kinetic(r1) - logp1 if math.isfinite(logp1) else math.inf
        energy_error = H1 - H0
        if math.isfinite(energy_error):
            divergent = energy_error > ENERGY_ERROR_THRESHOLD
            log_w = -energy_error
            alpha = math.exp(-energy_error) if energy_error > 0.0 else 1.0
        else:
            divergent = True
            log_w = -math.inf
            alpha = 0.0
        return _Tree(theta1, r1, logp1 if math.isfinite(logp1) else -math.inf,
                     grad1, H1, log_w, alpha, divergent)

    def _merge(self, tree: _Tree, other: _Tree, direction: int, root: bool):
        """Fold ``other`` (built in ``direction``) into ``tree``.

        Root merges select the candidate before accumulating weights (biased
        progressive sampling); inner merges accumulate first (uniform
        multinomial within the subtree). The termination test applies the
        generalized no-U-turn criterion to the merged span and to both
        boundary-augmented sub-spans.
        """
        # Capture boundary momenta in trajectory order before endpoints move.
        if direction == -1:
            rho_left, rho_right = other.r_sum, tree.r_sum
            left_last, right_first = other.r_p, tree.r_m
            tree.theta_m = other.theta_m
            tree.r_m = other.r_m
            tree.g_m = other.g_m
        else:
            rho_left, rho_right = tree.r_sum, other.r_sum
            left_last, right_first = tree.r_p, other.r_m
            tree.theta_p = other.theta_p
            tree.r_p = other.r_p
            tree.g_p = other.g_p

        tree.sum_alpha += other.sum_alpha
        tree.n_alpha += other.n_alpha
        tree.divergent |= other.divergent
        tree.s &= other.s
        if not tree.s:
            return

        if not root:
            tree.log_w = _logaddexp(tree.log_w, other.log_w)
        diff = other.log_w - tree.log_w
        if diff >= 0.0 or self.rng.random() < math.exp(diff):
            tree.theta = other.theta
            tree.logp = other.logp
            tree.grad = other.grad
            tree.H = other.H
        if root:
            tree.log_w = _logaddexp(tree.log_w, other.log_w)

        tree.r_sum = tree.r_sum + other.r_sum
        im = self.inv_mass
        sharp_m = im * tree.r_m
        sharp_p = im * tree.r_p
        rho_lf = rho_left + right_first
        rho_rl = rho_right + left_last
        ok = (tree.r_sum @ sharp_m > 0
              and tree.r_sum @ sharp_p > 0
              and rho_lf @ sharp_m > 0
              and rho_lf @ (im * right_first) > 0
              and rho_rl @ (im * left_last) > 0
              and rho_rl @ sharp_p > 0)
        tree.s &= ok

    def _build(self, tree: _Tree, direction: int, depth: int, eps: float,
               H0: float) -> _Tree:
        if depth == 0:
            if direction == -1:
                return self._leaf(tree.theta_m, tree.r_m, tree.g_m, eps, -1, H0)
            return self._leaf(tree.theta_p, tree.r_p, tree.g_p, eps, 1, H0)
        inner = self._build(tree, direction, depth - 1, eps, H0)
        if inner.s:
            outer = self._build(inner, direction, depth - 1, eps, H0)
            self._merge(inner, outer, direction, root=False)
        return inner

    def step(self, eps: float, max_depth: Optional[int] = None):
        """One NUTS transition from the current point."""
        if max_depth is None:
            max_depth = self.cfg.max_treedepth
        r0 = self._draw_momentum()
        H0 = self._kinetic(r0) - self.logp
        tree = _Tree(self.theta, r0, self.logp, self.grad, H0, 0.0, 1.0, False)
        tree.n_alpha = 0
        tree.sum_alpha = 0.0
        depth = 0
        while depth < max_depth and tree.s:
            direction = 1 if self.rng.uniform() < 0.5 else -1
            subtree = self._build(tree, direction, depth, eps, H0)
            self._merge(tree, subtree, direction, root=True)
            depth += 1
        self.theta = tree.theta
        self.logp = tree.logp
        self.grad = tree.grad
        accept = tree.sum_alpha / max(tree.n_alpha, 1)
        return tree.H, accept, depth, tree.divergent

    # -- adaptation ------------------------------------------------------------
    def run(self):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return self._run()

    def _run(self):
        cfg = self.cfg
        self.initialize()
        eps = self.find_reasonable_epsilon()
        da = _DualAveraging(eps, cfg.target_accept)

        windows = _warmup_windows(cfg.warmup)
        welford = _Welford(self.n_params)
        window_iter = iter(windows)
        current_window = next(window_iter, None)

        # Trees in the initial step-size buffer are capped: with an identity
        # mass matrix, unbounded doubling burns thousands of gradient
        # evaluations per iteration before adaptation has any information.
        # Mass-window and terminal iterations use the configured depth.
        init_end = windows[0][0] if windows else cfg.warmup
        init_cap = min(cfg.max_treedepth, WARMUP_TREEDEPTH_CAP)
        for it in range(cfg.warmup):
            depth_cap = init_cap if it < init_end else None
            _, accept, _, _ = self.step(da.eps, max_depth=depth_cap)
            da.update(accept)
            if current_window and current_window[0] <= it:
                welford.update(self.theta)
                if it == current_window[1] - 1:
                    var = welford.variance()
                    n = welford.n
                    self.inv_mass = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                    self.inv_mass = np.maximum(self.inv_mass, 1e-10)
                    welford = _Welford(self.n_params)
                    eps = self.find_reasonable_epsilon()
                    da = _DualAveraging(eps, cfg.target_accept)
                    current_window = next(window_iter, None)

        eps = da.adapted_eps()
        P = self.n_params
        draws = np.empty((cfg.draws, P))
        energy = np.empty(cfg.draws)
        accept_prob = np.empty(cfg.draws)
        tree_depth = np.empty(cfg.draws, dtype=np.int16)
        divergent = np.zeros(cfg.draws, dtype=bool)
        for it in range(cfg.draws):
            H, accept, depth, div = self.step(eps)
            draws[it] = self.theta
            energy[it] = H
            accept_prob[it] = accept
            tree_depth[it] = depth
            divergent[it] = div
        return draws, energy, accept_prob, tree_depth, divergent, eps, self.inv_mass


class _DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance."""

    def __init__(self, eps0: float, target: float, gamma: float = 0.05,
                 t0: float = 10.0, kappa: float = 0.75):
        self.mu = np.log(10.0 * eps0)
        self.log_eps = np.log(eps0)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.m = 0
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.target = target

    @property
    def eps(self) -> float:
        return float(np.exp(self.log_eps))

    def update(self, accept: float):
        self.m += 1
        frac = 1.0 / (self.m + self.t0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept)
        self.log_eps = self.mu - np.sqrt(self.m) / self.gamma * self.h_bar
        w = self.m ** (-self.kappa)
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar

    def adapted_eps(self) -> float:
        return float(np.exp(self.log_eps_bar))


class _Welford:
    """Streaming mean/variance accumulator for mass-matrix estimation."""

    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def update(self, x):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def variance(self) -> np.ndarray:
        if self.n < 2:
            return np.ones_like(self.m2)
        return self.m2 / (self.n - 1)


def _warmup_windows(warmup: int) -> list[tuple[int, int]]:
    """Mass-adaptation windows: 15% step-size-only start, doubling middle
    windows from 25 iterations, 10% step-size-only tail."""
    init_buf = max(int(round(0.15 * warmup)), 10)
    term_buf = max(int(round(0.10 * warmup)), 10)
    lo, hi = init_buf, warmup - term_buf
    windows = []
    size = 25
    start = lo
    while start < hi:
        end = min(start + size, hi)
        if hi - end < 25:  # absorb a too-small trailing window
            end = hi
        windows.append((start, end))
        start = end
        size *= 2
    return windows


def nuts_sample(target, cfg: SamplerConfig, n_params: Optional[int] = None,
                param_names: Optional[list] = None,
                init_points: Optional[np.ndarray] = None) -> PosteriorDraws:
    """Run ``cfg.chains`` independent NUTS chains against ``target``.

    ``target`` must return ``(log_density, grad)`` and be safe to call from
    any chain; non-finite evaluations are consumed as divergent leaves, never
    raised. ``n_params`` is inferred from ``target.n_params`` when omitted.
    """
    if n_params is None:
        n_params = getattr(target, "n_params", None)
        if n_params is None:
            raise ValueError("n_params not given and target does not expose it")
    if param_names is None:
        param_names = list(getattr(target, "param_names",
                                   [f"p{i}" for i in range(n_params)]))

    chain_results = []
    for chain in range(cfg.chains):
        init = None if init_points is None else np.asarray(init_points[chain], dtype=float)
        runner = _ChainRunner(target, cfg, chain, n_params, init_point=init)
        chain_results.append(runner.run())

    return PosteriorDraws(
        param_names=param_names,
        unconstrained=np.stack([r[0] for r in chain_results]),
        energy=np.stack([r[1] for r in chain_results]),
        accept_prob=np.stack([r[2] for r in chain_results]),
        tree_depth=np.stack([r[3] for r in chain_results]),
        divergent=np.stack([r[4] for r in chain_results]),
        step_size=np.array([r[5] for r in chain_results]),
        mass_diag=np.stack([r[6] for r in chain_results]),
        config=cfg,
    )
