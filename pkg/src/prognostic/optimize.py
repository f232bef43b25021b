"""Derivative-free optimisers: Nelder-Mead simplex and GP Bayesian optimisation."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm, qmc

from .errors import ConfigError, ValidationError


@dataclass
class NMConfig:
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    step: object = 0.05  # scalar or per-coordinate sequence
    max_evals: int = 2000
    tol: float = 1e-6
    # None: all initial steps positive; int: step signs drawn from this seed
    seed: Optional[int] = None

    def __post_init__(self):
        coeffs = (self.reflection, self.expansion, self.contraction, self.shrink)
        if min(coeffs) <= 0:
            raise ConfigError("Nelder-Mead coefficients must be positive")
        if self.expansion <= self.reflection:
            raise ConfigError("expansion must exceed reflection")
        if self.contraction >= 1 or self.shrink >= 1:
            raise ConfigError("contraction and shrink must be below 1")
        if self.max_evals < 1:
            raise ConfigError("max_evals must be positive")


@dataclass
class NMResult:
    x: np.ndarray
    fun: float
    trace: list  # best-so-far objective after every iteration
    n_evals: int
    n_iter: int
    converged: bool


def simplex_volume(simplex) -> float:
    """Volume of the simplex spanned by the ``n+1`` rows of ``simplex``."""
    s = np.asarray(simplex, dtype=float)
    d = s.shape[1]
    edges = s[1:] - s[0]
    return abs(np.linalg.det(edges)) / math.factorial(d)


def nelder_mead(f: Callable, x0, cfg: Optional[NMConfig] = None) -> NMResult:
    """Minimise ``f`` from ``x0``.

    Nonfinite objective values met during the search count as +inf, so the
    simplex steers away from them; a nonfinite value at ``x0`` is an error.
    """
    cfg = cfg or NMConfig()
    x0 = np.asarray(x0, dtype=float).copy()
    d = x0.size
    f0 = float(f(x0))
    if not math.isfinite(f0):
        raise ValidationError("objective is not finite at the starting point")

    n_evals = 1

    def fe(x):
        nonlocal n_evals
        n_evals += 1
        v = float(f(x))
        return v if math.isfinite(v) else math.inf

    step = np.broadcast_to(np.asarray(cfg.step, dtype=float), (d,)).copy()
    if cfg.seed is not None:
        signs = np.random.default_rng(cfg.seed).choice([-1.0, 1.0], size=d)
        step *= signs
    simplex = [x0]
    fvals = [f0]
    for i in range(d):
        if n_evals >= cfg.max_evals:
            break
        x = x0.copy()
        x[i] += step[i]
        simplex.append(x)
        fvals.append(fe(x))
    if len(simplex) < d + 1:
        return NMResult(x0, f0, [f0], n_evals, 0, False)
    simplex = np.array(simplex)
    fvals = np.array(fvals)

    a, g, rho, sig = cfg.reflection, cfg.expansion, cfg.contraction, cfg.shrink
    trace = []
    n_iter = 0
    converged = False
    while True:
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        trace.append(float(fvals[0]))
        if fvals[-1] - fvals[0] < cfg.tol:
            converged = True
            break
        if n_evals >= cfg.max_evals:
            break
        n_iter += 1
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + a * (centroid - worst)
        fr = fe(xr)
        if fvals[0] <= fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[0]:
            xe = centroid + g * (xr - centroid)
            fe_ = fe(xe)
            if fe_ < fr:
                simplex[-1], fvals[-1] = xe, fe_
            else:
                simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-1]:
            xc = centroid + rho * (xr - centroid)
            fc = fe(xc)
            if fc <= fr:
                simplex[-1], fvals[-1] = xc, fc
                continue
        else:
            xc = centroid + rho * (worst - centroid)
            fc = fe(xc)
            if fc < fvals[-1]:
                simplex[-1], fvals[-1] = xc, fc
                continue
        for i in range(1, d + 1):
            if n_evals >= cfg.max_evals:
                break
            simplex[i] = simplex[0] + sig * (simplex[i] - simplex[0])
            fvals[i] = fe(simplex[i])

    best = int(np.argmin(fvals))
    return NMResult(simplex[best].copy(), float(fvals[best]), trace, n_evals, n_iter, converged)


@dataclass
class BOConfig:
    dim: int
    bounds: Sequence = None  # [(lo, hi), ...]; defaults to the unit cube
    m0: int = 0  # random initial points; 0 means dim + 1
    n_eval: int = 60
    xi: float = 0.01
    length_scales: tuple = (0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 2.0)
    noise: float = 1e-6
    n_candidates: int = 1024
    seed: int = 0

    def __post_init__(self):
        if self.bounds is None:
            self.bounds = [(0.0, 1.0)] * self.dim
        self.bounds = [tuple(map(float, b)) for b in self.bounds]
        if len(self.bounds) != self.dim:
            raise ConfigError("bounds must have one (lo, hi) pair per dimension")
        for lo, hi in self.bounds:
            if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
                raise ConfigError("bounds must be finite with hi > lo")
        if self.m0 == 0:
            self.m0 = self.dim + 1
        if self.m0 < self.dim + 1:
            raise ConfigError("m0 must be at least dim + 1")
        if self.n_eval <= self.m0:
            raise ConfigError("n_eval must exceed m0")
        if self.n_candidates < 1000:
            raise ConfigError("at least 1000 candidates per iteration are required")


@dataclass
class BOResult:
    x: np.ndarray
    fun: float
    X: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    n_degenerate: int = 0


def _se_kernel(A, B, ls):
    d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)
    return np.exp(-0.5 * d2 / ls**2)


def _gp_fit(U, z, length_scales, noise):
    """Pick the length-scale with the best log marginal likelihood."""
    n = len(z)
    best = None
    for ls in length_scales:
        K = _se_kernel(U, U, ls) + noise * np.eye(n)
        try:
            c = cho_factor(K, lower=True)
        except np.linalg.LinAlgError:
            continue
        alpha = cho_solve(c, z)
        lml = -0.5 * z @ alpha - np.log(np.diag(c[0])).sum()
        if best is None or lml > best[0]:
            best = (lml, ls, c, alpha)
    return best


def bayes_opt_maximize(f: Callable, cfg: BOConfig, initial_points=None) -> BOResult:
    """Maximise ``f`` over a box with a squared-exponential GP and expected improvement.

    ``initial_points`` are evaluated before the ``m0`` random points. When all
    observations are equal the GP is uninformative and the next proposal is a
    uniform random point instead.
    """
    rng = np.random.default_rng(cfg.seed)
    lo = np.array([b[0] for b in cfg.bounds])
    hi = np.array([b[1] for b in cfg.bounds])
    span = hi - lo

    def to_unit(x):
        return (np.asarray(x, dtype=float) - lo) / span

    U = []
    y = []

    def evaluate(u):
        x = lo + span * u
        v = float(f(x))
        U.append(np.asarray(u, dtype=float))
        y.append(v if math.isfinite(v) else -math.inf)

    for p in initial_points or []:
        if len(y) >= cfg.n_eval:
            break
        evaluate(np.clip(to_unit(p), 0.0, 1.0))
    for _ in range(cfg.m0):
        if len(y) >= cfg.n_eval:
            break
        evaluate(rng.random(cfg.dim))

    sobol_seed = int(rng.integers(2**31))
    sampler = qmc.Sobol(cfg.dim, scramble=True, seed=sobol_seed)
    m = int(2 ** math.ceil(math.log2(cfg.n_candidates)))
    n_degenerate = 0
    while len(y) < cfg.n_eval:
        Ua = np.array(U)
        ya = np.array(y)
        finite = np.isfinite(ya)
        yf = ya[finite]
        if yf.size < 2 or np.ptp(yf) == 0:
            n_degenerate += 1
            evaluate(rng.random(cfg.dim))
            continue
        z = (yf - yf.mean()) / yf.std()
        fit = _gp_fit(Ua[finite], z, cfg.length_scales, cfg.noise)
        if fit is None:
            n_degenerate += 1
            evaluate(rng.random(cfg.dim))
            continue
        _, ls, chol, alpha = fit
        cand = sampler.random(m)
        Ks = _se_kernel(cand, Ua[finite], ls)
        mu = Ks @ alpha
        v = cho_solve(chol, Ks.T)
        var = np.maximum(1.0 - np.einsum("ij,ji->i", Ks, v), 1e-12)
        sd = np.sqrt(var)
        imp = mu - z.max() - cfg.xi
        zz = imp / sd
        ei = imp * norm.cdf(zz) + sd * norm.pdf(zz)
        evaluate(cand[int(np.argmax(ei))])

    ya = np.array(y)
    best = int(np.argmax(ya))
    X = lo + span * np.array(U)
    return BOResult(X[best].copy(), float(ya[best]), X, ya, n_degenerate)


def grid_maximize(f: Callable, bounds, resolution: float = 0.01):
    """Dense-grid oracle for low-dimensional checks; returns (x, f(x))."""
    axes = [np.arange(lo, hi + resolution / 2, resolution) for lo, hi in bounds]
    best_x, best_v = None, -math.inf
    for pt in itertools.product(*axes):
        v = float(f(np.array(pt)))
        if v > best_v:
            best_x, best_v = np.array(pt), v
    return best_x, best_v
