"""Quantized latent search by back-propagation through a fixed generator.

Three strategies share one driver signature
``search_*(x, G, cb, objective, cfg, encoder=None, z0=None) -> (z_q, report)``:

* ``direct`` - gradient step on the current quantized iterate, then project;
* ``admm``   - gradient step on the augmented Lagrangian, codebook projection
  of the auxiliary variable, scaled dual ascent, final projection;
* ``iht``    - progressive freezing of the coordinates closest to a center.

Randomness is confined to :func:`initialize`.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InputError, NumericalError, ShapeError
from .objectives import evaluate, value_and_grad

METHODS = ("direct", "admm", "iht")


@dataclass
class SearchConfig:
    method: str = "admm"
    max_iters: int = 500
    step: float = 0.01
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    mu: float = 0.01
    inner_steps: int = 1
    convergence_tol: float = 1e-6
    iht_substeps: int = 4
    iht_quota: Optional[Sequence[int]] = None
    iht_inner: Optional[Sequence[int]] = None
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise InputError(f"method must be one of {METHODS}, got {self.method!r}", module="search")
        if self.optimizer not in ("sgd", "adam"):
            raise InputError(f"optimizer must be sgd or adam, got {self.optimizer!r}", module="search")
        if self.max_iters < 0:
            raise InputError("max_iters must be >= 0", module="search")
        if not self.step > 0:
            raise InputError("step must be positive", module="search")
        if not self.mu > 0:
            raise InputError("mu must be positive", module="search")
        if self.inner_steps < 1:
            raise InputError("inner_steps must be >= 1", module="search")
        if self.convergence_tol < 0:
            raise InputError("convergence_tol must be >= 0", module="search")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise InputError("adam parameters out of range", module="search")
        if self.iht_substeps < 1:
            raise InputError("iht_substeps must be >= 1", module="search")

    def iht_schedule(self, dim):
        """``(quota, inner)`` lists for IHT, filling in defaults."""
        if self.iht_quota is not None:
            quota = [int(m) for m in self.iht_quota]
            n = len(quota)
        else:
            n = max(1, min(self.iht_substeps, dim))
            quota = [len(a) for a in np.array_split(np.arange(dim), n)]
        if self.iht_inner is not None:
            inner = [int(v) for v in self.iht_inner]
        else:
            base, extra = divmod(self.max_iters, n)
            inner = [base + (1 if i < extra else 0) for i in range(n)]
        if len(inner) != len(quota):
            raise InputError(f"iht_inner has {len(inner)} entries, iht_quota has {len(quota)}", module="search")
        if sum(quota) != dim or any(m < 1 for m in quota):
            raise InputError(f"iht_quota must be positive and sum to latent dim {dim}, got {quota}", module="search")
        if any(v < 0 for v in inner):
            raise InputError("iht_inner entries must be >= 0", module="search")
        return quota, inner


@dataclass
class SearchReport:
    method: str
    iterations: int = 0
    history: list = field(default_factory=list)
    lagrangian: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    final_objective: float = float("nan")
    converged: bool = False


# --- initialization & optimizers -------------------------------------------------


def initialize(x, encoder, dim, seed=0):
    """Starting latent: ``E(x)`` when an encoder is given, else seeded N(0, 1)."""
    if encoder is None:
        return np.random.default_rng(seed).standard_normal(dim)
    x = np.asarray(x, dtype=np.float64)
    if x.size != encoder.input_dim:
        raise ShapeError(f"encoder expects {encoder.input_shape}, signal has shape {x.shape}", module="search")
    z = encoder(x.reshape(encoder.input_shape)).ravel()
    if z.size != dim:
        raise ShapeError(f"encoder output dim {z.size} != latent dim {dim}", module="search")
    return z


class SGD:
    def __init__(self, step):
        self.step_size = step

    def step(self, z, g):
        return z - self.step_size * g


class Adam:
    def __init__(self, step, beta1=0.9, beta2=0.999, eps=1e-8):
        self.step_size, self.b1, self.b2, self.eps = step, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, z, g):
        if self.m is None:
            self.m = np.zeros_like(z)
            self.v = np.zeros_like(z)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        m_hat = self.m / (1 - self.b1**self.t)
        v_hat = self.v / (1 - self.b2**self.t)
        return z - self.step_size * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(cfg):
    if cfg.optimizer == "sgd":
        return SGD(cfg.step)
    return Adam(cfg.step, cfg.beta1, cfg.beta2, cfg.eps)


def optimizer_step(opt, z, g):
    """One optimizer update; refuses non-finite gradients."""
    g = np.asarray(g, dtype=np.float64)
    if g.shape != np.shape(z):
        raise ShapeError(f"gradient shape {g.shape} != latent shape {np.shape(z)}", module="search")
    if not np.all(np.isfinite(g)):
        bad = int(np.flatnonzero(~np.isfinite(g))[0])
        raise NumericalError(f"non-finite gradient at latent element {bad}", module="search")
    return opt.step(np.asarray(z, dtype=np.float64), g)


# --- strategies ----------------------------------------------------------------


def _start(x, G, encoder, z0, cfg):
    if z0 is not None:
        z = np.asarray(z0, dtype=np.float64).ravel().copy()
        if z.size != G.input_dim:
            raise ShapeError(f"initial latent has {z.size} elements, generator wants {G.input_dim}", module="search")
        return z
    return initialize(x, encoder, G.input_dim, cfg.seed)


def _finish(report, x, z, G, cb, objective):
    zq = cb.project(z)
    report.final_objective = float(evaluate(x, zq, G, objective))
    if not np.isfinite(report.final_objective):
        raise NumericalError("objective is not finite at the final latent", module="search")
    return zq, report


def search_direct(x, G, cb, objective, cfg, encoder=None, z0=None):
    """Alternate a gradient step at the quantized iterate with projection."""
    z = cb.project(_start(x, G, encoder, z0, cfg))
    opt = make_optimizer(cfg)
    rep = SearchReport("direct")
    for k in range(cfg.max_iters):
        f, g = value_and_grad(x, z, G, objective)
        rep.history.append(float(f))
        rep.iterations = k + 1
        if k and abs(rep.history[-1] - rep.history[-2]) <= cfg.convergence_tol:
            rep.converged = True
            break
        z = cb.project(optimizer_step(opt, z, g))
    return _finish(rep, x, z, G, cb, objective)


def admm_dual_update(eta, z, u):
    return eta + z - u


def search_admm(x, G, cb, objective, cfg, encoder=None, z0=None):
    """ADMM over z = u with u constrained to the codebook."""
    mu = cfg.mu
    z = _start(x, G, encoder, z0, cfg)
    u = cb.project(z)
    eta = np.zeros_like(z)
    opt = make_optimizer(cfg)
    rep = SearchReport("admm")
    prev = None
    for k in range(cfg.max_iters):
        for s in range(cfg.inner_steps):
            f, g = value_and_grad(x, z, G, objective)
            r = z - u + eta
            if s == 0:
                aug = float(f) + 0.5 * mu * float(r @ r)
                rep.history.append(float(f))
                rep.lagrangian.append(aug - 0.5 * mu * float(eta @ eta))
            z = optimizer_step(opt, z, g + mu * r)
        u = cb.project(z + eta)
        eta = admm_dual_update(eta, z, u)
        rep.residual.append(float(np.max(np.abs(z - u))) if z.size else 0.0)
        rep.iterations = k + 1
        if prev is not None and abs(aug - prev) <= cfg.convergence_tol:
            rep.converged = True
            break
        prev = aug
    return _finish(rep, x, z, G, cb, objective)


def search_iht(x, G, cb, objective, cfg, encoder=None, z0=None):
    """Progressively freeze the unfrozen coordinates nearest to a center."""
    z = _start(x, G, encoder, z0, cfg)
    quota, inner = cfg.iht_schedule(z.size)
    frozen = np.zeros(z.size, dtype=bool)
    opt = make_optimizer(cfg)
    rep = SearchReport("iht")
    for m_i, n_i in zip(quota, inner):
        for _ in range(n_i):
            f, g = value_and_grad(x, z, G, objective)
            rep.history.append(float(f))
            g = np.where(frozen, 0.0, g)
            z = np.where(frozen, z, optimizer_step(opt, z, g))
            rep.iterations += 1
        free = np.flatnonzero(~frozen)
        q = cb.project(z)
        dist = np.abs(z[free] - q[free])
        pick = free[np.argsort(dist, kind="stable")[:m_i]]
        z[pick] = q[pick]
        frozen[pick] = True
    return _finish(rep, x, z, G, cb, objective)


_SEARCHES = {"direct": search_direct, "admm": search_admm, "iht": search_iht}


def search(x, G, cb, objective, cfg, encoder=None, z0=None):
    return _SEARCHES[cfg.method](x, G, cb, objective, cfg, encoder=encoder, z0=z0)

