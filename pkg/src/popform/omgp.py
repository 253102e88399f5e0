"""Overlapping mixture of Gaussian processes fitted by variational EM.

Every component k is handled through the well-conditioned factor

    A_k = I + B_k^1/2 K_k B_k^1/2,   B_k = diag(resp[:, k]) / sigma^2

so zero responsibilities are harmless and K_k is never inverted. The
variational posterior over f_k from an f-update with site precision D is
``N(m + K alpha, K - V^T V)`` with ``alpha = D^1/2 A^-1 D^1/2 (y - m)`` and
``V = L^-1 D^1/2 K``; both bounds are evaluated from these pieces.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.special import logsumexp, xlogy

from . import gp
from . import linalg as la
from .gp import Bounds, Hyperparameters, TrainingSet
from .modal import ModalModel, Mode
from .optim import minimize_box

E_TOL = 1e-6
E_MAX_ITER = 200
EM_TOL = 1e-6
EM_MAX_ITER = 50
INIT_NOISE = 0.05


@dataclass(frozen=True)
class OmgpModel:
    components: tuple
    shared_noise_std: float
    responsibilities: np.ndarray
    training: TrainingSet
    prior: np.ndarray | None = None
    bound_trace: tuple = ()
    lb_traces: tuple = ()
    bounds: Bounds = field(default_factory=Bounds)
    converged: bool = True
    message: str = ""
    restart_bounds: tuple = ()

    def __post_init__(self):
        comps = tuple(replace(c, noise_std=self.shared_noise_std) for c in self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise ValueError("need at least one component")
        if self.shared_noise_std <= 0:
            raise ValueError("shared noise std must be > 0")
        resp = np.asarray(self.responsibilities, dtype=float)
        if resp.shape != (len(self.training), len(comps)):
            raise ValueError(f"responsibilities must have shape (N, K), got {resp.shape}")
        check_responsibilities(resp)
        object.__setattr__(self, "responsibilities", resp)
        prior = uniform_prior(len(self.training), len(comps)) if self.prior is None else np.asarray(self.prior, float)
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "bound_trace", tuple(float(v) for v in self.bound_trace))

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def part(self) -> str:
        return self.training.part

    def with_responsibilities(self, resp) -> "OmgpModel":
        return replace(self, responsibilities=resp)


@dataclass(frozen=True)
class FPosterior:
    """q(f_k) on the training inputs, as produced by an f-update."""

    mean: np.ndarray
    var: np.ndarray
    site: np.ndarray  # diagonal of B_k used for the update
    chol: np.ndarray  # lower factor of I + D^1/2 K D^1/2
    alpha: np.ndarray
    V: np.ndarray
    K: np.ndarray
    prior_mean: np.ndarray

    @cached_property
    def cov(self) -> np.ndarray:
        c = self.K - self.V.T @ self.V
        return 0.5 * (c + c.T)


@dataclass(frozen=True)
class ComponentPosterior:
    x: np.ndarray
    means: np.ndarray  # (K, M)
    covariances: np.ndarray  # (K, M, M)
    weights: np.ndarray  # (K,)

    @cached_property
    def chols(self) -> list:
        return [la.jittered_cholesky(c, max(float(np.max(np.diag(c))), 1e-300))[0] for c in self.covariances]

    def log_densities(self, y_star) -> np.ndarray:
        y_star = np.asarray(y_star, dtype=float)
        return np.array([la.mvn_logpdf_chol(y_star, mu, L) for mu, L in zip(self.means, self.chols)])


# ---------------------------------------------------------------- helpers


def uniform_prior(n, k) -> np.ndarray:
    return np.full((n, k), 1.0 / k)


def check_responsibilities(resp, tol=1e-9):
    if np.any(resp < -tol) or np.any(resp > 1 + tol):
        raise ValueError("responsibilities must lie in [0, 1]")
    if not np.allclose(resp.sum(axis=1), 1.0, rtol=0, atol=tol):
        raise ValueError("responsibility rows must sum to 1")


def initial_responsibilities(n, k, rng, amplitude=INIT_NOISE) -> np.ndarray:
    resp = 1.0 / k + amplitude * rng.uniform(0.0, 1.0, size=(n, k))
    return resp / resp.sum(axis=1, keepdims=True)


def b_matrix(responsibilities, k: int, sigma: float) -> np.ndarray:
    """Diagonal matrix diag(resp[:, k]) / sigma^2."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    return np.diag(np.asarray(responsibilities, dtype=float)[:, k] / sigma**2)


def kl_z(resp, prior) -> float:
    """KL(q(Z) || p(Z)) with 0 log 0 = 0."""
    return float(np.sum(xlogy(resp, resp) - xlogy(resp, prior)))


def map_labels(model: OmgpModel) -> np.ndarray:
    """Most responsible component for every training point (lowest index on ties)."""
    return np.argmax(model.responsibilities, axis=1)


def _stats(comp: Hyperparameters, x):
    K = gp.kernel_matrix(x, x, comp.length_scale, comp.process_std)
    m = gp.mean_function(comp, x)
    return K, m


def _factor(K, sb):
    A = np.eye(K.shape[0]) + sb[:, None] * K * sb[None, :]
    L, _ = la.jittered_cholesky(A, 1.0)
    return L


def _f_update(K, m, y, site) -> FPosterior:
    sb = np.sqrt(site)
    L = _factor(K, sb)
    alpha = sb * la.cho_solve(L, sb * (y - m))
    V = la.solve_lower(L, sb[:, None] * K)
    var = np.diag(K) - np.sum(V * V, axis=0)
    return FPosterior(m + K @ alpha, var, site, L, alpha, V, K, m)


def _z_update(y, posts, prior, s) -> np.ndarray:
    a = np.stack([-0.5 / s * ((y - p.mean) ** 2 + p.var) for p in posts], axis=1)
    a -= 0.5 * np.log(2.0 * np.pi * s)
    with np.errstate(divide="ignore"):
        logits = np.log(prior) + a
    logits -= logsumexp(logits, axis=1, keepdims=True)
    resp = np.exp(logits)
    return resp / resp.sum(axis=1, keepdims=True)


def _lb(y, resp, prior, posts, s) -> float:
    n = y.size
    value = -0.5 * np.log(2.0 * np.pi * s) * resp.sum()
    for k, p in enumerate(posts):
        value -= 0.5 / s * np.sum(resp[:, k] * ((y - p.mean) ** 2 + p.var))
        kl_f = 0.5 * (-np.sum(p.site * p.var) + p.alpha @ (p.mean - p.prior_mean) + la.logdet_from_chol(p.chol))
        value -= kl_f
    del n
    return float(value - kl_z(resp, prior))


def _lbc_component(K, r, p, s):
    sb = np.sqrt(p / s)
    L = _factor(K, sb)
    z = la.solve_lower(L, sb * r)
    return -0.5 * z @ z - np.sum(np.log(np.diag(L))) - 0.5 * np.sum(p) * np.log(2.0 * np.pi * s)


# ---------------------------------------------------------------- public steps


def estep_update_f(model: OmgpModel) -> list:
    """Optimal q(f_k) for the current responsibilities."""
    s = model.shared_noise_std**2
    x, y = model.training.x, model.training.y
    posts = []
    for k, comp in enumerate(model.components):
        K, m = _stats(comp, x)
        posts.append(_f_update(K, m, y, model.responsibilities[:, k] / s))
    return posts


def estep_update_z(model: OmgpModel, component_posteriors) -> np.ndarray:
    """Optimal responsibilities given q(f_k), normalised in log space."""
    return _z_update(model.training.y, component_posteriors, model.prior, model.shared_noise_std**2)


def lower_bound_lb(model: OmgpModel, component_posteriors) -> float:
    """Standard variational bound for q(Z) = model responsibilities and the given q(f)."""
    return _lb(model.training.y, model.responsibilities, model.prior, component_posteriors,
               model.shared_noise_std**2)


def lower_bound_lbc(model: OmgpModel) -> float:
    """Marginalised bound: q(f) integrated out optimally for the current q(Z)."""
    s = model.shared_noise_std**2
    x, y = model.training.x, model.training.y
    total = 0.0
    for k, comp in enumerate(model.components):
        K, m = _stats(comp, x)
        total += _lbc_component(K, y - m, model.responsibilities[:, k], s)
    return float(total - kl_z(model.responsibilities, model.prior))


def _pack(components, sigma):
    return np.concatenate([gp.pack(c, with_noise=False) for c in components] + [[np.log(sigma)]])


def _unpack(z, templates):
    sigma = float(np.exp(z[-1]))
    comps, i = [], 0
    for t in templates:
        n = 2 + 3 * len(t.mean_params.modes)
        comps.append(gp.unpack(z[i: i + n], t, noise_std=sigma))
        i += n
    return comps, sigma


def _box(templates, bounds):
    los, his = [], []
    for t in templates:
        lo, hi = gp.box(bounds, len(t.mean_params.modes), with_noise=False)
        los.append(lo)
        his.append(hi)
    los.append([np.log(bounds.noise_std[0])])
    his.append([np.log(bounds.noise_std[1])])
    return np.concatenate(los), np.concatenate(his)


def lbc_and_grad(z, templates, data: TrainingSet, resp, prior):
    """L_bc and its gradient with respect to the packed M-step vector."""
    comps, sigma = _unpack(z, templates)
    s = sigma**2
    x, y = data.x, data.y
    n = y.size
    total = 0.0
    grads = []
    d_s = 0.0
    for k, comp in enumerate(comps):
        p = resp[:, k]
        K, dK = gp._kernel_and_grads(x, comp.length_scale, comp.process_std)
        m, dm = gp._mean_and_grads(comp.mean_params, comp.part, x)
        r = y - m
        sp = np.sqrt(p)
        sb = sp / sigma
        L = _factor(K, sb)
        u = sp * r
        w = la.cho_solve(L, u)  # A^-1 u
        q = (u @ w) / s
        total += -0.5 * q - np.sum(np.log(np.diag(L))) - 0.5 * np.sum(p) * np.log(2.0 * np.pi * s)
        Ai = la.inverse_from_chol(L)
        alpha = sb * la.cho_solve(L, sb * r)
        W = sb[:, None] * Ai * sb[None, :]
        g = np.empty(2 + dm.shape[0])
        for j in range(2):
            g[j] = 0.5 * (alpha @ dK[j] @ alpha - np.sum(W * dK[j]))
        g[2:] = dm @ alpha
        grads.append(g)
        d_s += 0.5 * (n - np.trace(Ai)) / s + 0.5 * (w @ w) / s**2 - 0.5 * np.sum(p) / s
    value = total - kl_z(resp, prior)
    grad = np.concatenate(grads + [[2.0 * s * d_s]])
    return float(value), grad


# ---------------------------------------------------------------- EM


def run_estep(model: OmgpModel, max_iter=E_MAX_ITER, tol=E_TOL):
    """Alternate f- and z-updates until L_b stalls.

    Returns the updated model and the L_b values recorded after every half-step.
    """
    s = model.shared_noise_std**2
    x, y = model.training.x, model.training.y
    stats = [_stats(c, x) for c in model.components]
    resp = model.responsibilities
    trace = []
    prev = None
    for _ in range(max_iter):
        posts = [_f_update(K, m, y, resp[:, k] / s) for k, (K, m) in enumerate(stats)]
        trace.append(_lb(y, resp, model.prior, posts, s))
        resp = _z_update(y, posts, model.prior, s)
        lb = _lb(y, resp, model.prior, posts, s)
        trace.append(lb)
        if prev is not None and abs(lb - prev) < tol * abs(lb):
            break
        prev = lb
    return model.with_responsibilities(resp), trace


def run_mstep(model: OmgpModel, method="l-bfgs-b", maxiter=200):
    """Maximise L_bc over all hyperparameters with q(Z) held fixed."""
    templates = model.components
    z0 = _pack(templates, model.shared_noise_std)
    lo, hi = _box(templates, model.bounds)
    z0 = np.clip(z0, lo, hi)
    data, resp, prior = model.training, model.responsibilities, model.prior
    use_grad = method.lower() != "nelder-mead"

    def fun(z):
        try:
            if use_grad:
                v, g = lbc_and_grad(z, templates, data, resp, prior)
                return -v, -g
            comps, sigma = _unpack(z, templates)
            return -lower_bound_lbc(replace(model, components=tuple(comps), shared_noise_std=sigma))
        except (la.FactorizationError, ValueError, FloatingPointError):
            return (np.inf, np.zeros_like(z)) if use_grad else np.inf

    res = minimize_box(fun, z0, lo, hi, method=method, jac=use_grad, maxiter=maxiter)
    comps, sigma = _unpack(res.x, templates)
    return replace(model, components=tuple(comps), shared_noise_std=sigma), res


def run_em(model: OmgpModel, max_iter=EM_MAX_ITER, tol=EM_TOL, e_max_iter=E_MAX_ITER,
           e_tol=E_TOL, method="l-bfgs-b", m_maxiter=200) -> OmgpModel:
    """EM from the model's current hyperparameters and responsibilities.

    The L_bc trace gets one entry after every E-step and every M-step; a final
    E-step leaves the responsibilities consistent with the returned
    hyperparameters.
    """
    trace = []
    lb_traces = []
    converged = False
    message = "iteration cap reached"
    prev = None
    for _ in range(max_iter):
        model, lbs = run_estep(model, e_max_iter, e_tol)
        lb_traces.append(tuple(lbs))
        trace.append(lower_bound_lbc(model))
        model, _ = run_mstep(model, method, m_maxiter)
        value = lower_bound_lbc(model)
        trace.append(value)
        if prev is not None and abs(value - prev) < tol * abs(value):
            converged, message = True, "bound converged"
            break
        prev = value
    model, lbs = run_estep(model, e_max_iter, e_tol)
    lb_traces.append(tuple(lbs))
    trace.append(lower_bound_lbc(model))
    return replace(model, bound_trace=tuple(trace), lb_traces=tuple(lb_traces),
                   converged=converged, message=message)


def active_range(x, y, level=0.25):
    """Frequency span where |y| reaches ``level`` of its maximum."""
    a = np.abs(y)
    keep = a >= level * a.max()
    return float(np.min(x[keep])), float(np.max(x[keep]))


def random_components(rng, data: TrainingSet, k: int, bounds: Bounds, n_modes=1,
                      init_range=None) -> tuple:
    """Random per-component starting points.

    Natural frequencies are stratified over ``init_range`` (by default the span
    where the data magnitude is within a quarter of its peak); residues are
    matched to the local data peak for the drawn damping ratio.
    """
    x, y = data.x, data.y
    lo, hi = init_range or active_range(x, y)
    lo, hi = max(lo, bounds.natural_frequency[0]), min(hi, bounds.natural_frequency[1])
    edges = np.linspace(lo, hi, k * n_modes + 1)
    fns = np.sort(rng.uniform(edges[:-1], edges[1:])).reshape(k, n_modes) if hi > lo else \
        np.full((k, n_modes), lo)
    spread = float(np.std(y)) or 1.0
    width = max((hi - lo) / (k * n_modes), float(np.ptp(x)) / max(len(x), 1))
    comps = []
    for row in fns:
        modes = []
        for fn in row:
            zeta = float(np.clip(np.exp(rng.uniform(np.log(0.005), np.log(0.05))), *bounds.damping_ratio))
            near = np.abs(x - fn) <= width
            peak = float(np.max(np.abs(y[near]))) if np.any(near) else float(np.max(np.abs(y)))
            res = float(np.clip(2.0 * zeta * peak * rng.uniform(0.5, 1.0), *bounds.residue))
            modes.append(Mode(float(fn), zeta, data.residue_sign * res))
        comps.append(Hyperparameters(
            float(np.clip(np.exp(rng.uniform(np.log(0.5), np.log(2.0))), *bounds.length_scale)),
            float(np.clip(0.1 * spread * rng.uniform(0.5, 2.0), *bounds.process_std)),
            float(np.clip(0.2 * spread, *bounds.noise_std)),
            ModalModel(tuple(modes)),
            data.part,
        ))
    return tuple(comps)


def _modal(z, template):
    return gp.unpack(np.r_[0.0, 0.0, z], template, noise_std=1.0).mean_params


def mean_mixture(data: TrainingSet, models, sigma: float, bounds: Bounds, max_iter=100, tol=1e-8,
                 shared_noise=False):
    """EM for a mixture of modal-mean regressions with Gaussian noise.

    This is the OMGP with the GP terms switched off, so it costs O(N K) per
    iteration. It is used to move random starting points into a sensible
    basin before the full EM runs. With ``shared_noise=False`` every
    component gets its own noise level, which copes better with members whose
    amplitudes (and hence peak-scaled noise) differ.

    Returns ``(models, noise_stds, log_likelihood)``.
    """
    x, y, part = data.x, data.y, data.part
    n, k = y.size, len(models)
    lo, hi = gp.box(bounds, len(models[0].modes), with_noise=False)
    lo, hi = lo[2:], hi[2:]
    template = [Hyperparameters(1.0, 1.0, sigma, m, part) for m in models]
    zs = [np.clip(gp.pack(t, with_noise=False)[2:], lo, hi) for t in template]
    s = np.full(k, sigma**2)
    floor = bounds.noise_std[0] ** 2

    def all_means():
        return np.stack([gp.modal_mean(_modal(z, t), part, x) for z, t in zip(zs, template)], axis=1)

    prev = -np.inf
    ll = prev
    for _ in range(max_iter):
        means = all_means()
        logp = -0.5 * (y[:, None] - means) ** 2 / s - 0.5 * np.log(2 * np.pi * s) - np.log(k)
        norm = logsumexp(logp, axis=1, keepdims=True)
        ll = float(norm.sum())
        if abs(ll - prev) < tol * abs(ll):
            break
        prev = ll
        resp = np.exp(logp - norm)
        for j in range(k):
            w = resp[:, j]

            def sse(z, j=j, w=w):
                m, dm = gp._mean_and_grads(_modal(z, template[j]), part, x)
                r = y - m
                return float(w @ r**2), -2.0 * dm @ (w * r)

            zs[j] = minimize_box(sse, zs[j], lo, hi, method="l-bfgs-b", jac=True, maxiter=30).x
        sq = resp * (y[:, None] - all_means()) ** 2
        if shared_noise:
            s = np.full(k, max(float(sq.sum()) / n, floor))
        else:
            s = np.maximum(sq.sum(axis=0) / np.maximum(resp.sum(axis=0), 1e-12), floor)
    fitted = [_modal(z, t) for z, t in zip(zs, template)]
    return fitted, np.sqrt(s), ll


def seeded_components(rng, data: TrainingSet, k: int, bounds: Bounds, n_seeds=8, init_range=None):
    """Random starts refined by :func:`mean_mixture`; the best seed is kept."""
    best = None
    for _ in range(n_seeds):
        comps = random_components(rng, data, k, bounds, init_range=init_range)
        models, sigmas, ll = mean_mixture(data, [c.mean_params for c in comps], comps[0].noise_std, bounds)
        if best is None or ll > best[0]:
            best = (ll, comps, models, sigmas)
    _, comps, models, sigmas = best
    sigma = float(np.clip(np.sqrt(np.mean(sigmas**2)), *bounds.noise_std))
    order = np.argsort([m.modes[0].natural_frequency for m in models])
    lo_f, hi_f = bounds.process_std
    out = tuple(
        replace(comps[i], mean_params=models[o], noise_std=sigma,
                process_std=float(np.clip(sigma * np.exp(rng.uniform(np.log(0.01), np.log(0.1))), lo_f, hi_f)))
        for i, o in enumerate(order)
    )
    return out, sigma


def _single_restart(data, comps, sigma, bounds, resp0, em_kwargs):
    model = OmgpModel(tuple(comps), sigma, resp0, data, None, bounds=bounds)
    return run_em(model, **em_kwargs)


def fit(data: TrainingSet, k: int, bounds: Bounds | None = None, restarts: int = 10,
        rng_seed: int = 0, init=None, init_noise_std=None, init_range=None, jobs: int = 1,
        seeds_per_restart: int = 8, **em_kwargs) -> OmgpModel:
    """Fit a K-component OMGP with random restarts; the highest final L_bc wins.

    ``init`` may be a sequence of per-component :class:`Hyperparameters` (e.g.
    from the real-part fit) or a fitted :class:`OmgpModel`; it seeds restart 0.
    Every other restart draws ``seeds_per_restart`` random mean-function
    starts, refines them with :func:`mean_mixture` and keeps the best one
    (``seeds_per_restart=0`` uses a single raw random draw instead).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    bounds = bounds or Bounds()
    rng = np.random.default_rng(rng_seed)
    starts = []
    if init is not None:
        if isinstance(init, OmgpModel):
            init_noise_std = init_noise_std or init.shared_noise_std
            init = init.components
        comps = tuple(replace(c, part=data.part) for c in init)
        if len(comps) != k:
            raise ValueError(f"init has {len(comps)} components, expected {k}")
        for c in comps:
            if not bounds.contains(c, check_noise=False):
                raise ValueError("initial hyperparameters lie outside the bounds")
        sigma = init_noise_std or comps[0].noise_std
        starts.append((comps, float(np.clip(sigma, *bounds.noise_std))))
    while len(starts) < restarts:
        if seeds_per_restart > 0:
            starts.append(seeded_components(rng, data, k, bounds, seeds_per_restart, init_range))
        else:
            comps = random_components(rng, data, k, bounds, init_range=init_range)
            starts.append((comps, comps[0].noise_std))
    resp0 = [initial_responsibilities(len(data), k, rng) for _ in starts]

    args = [(data, c, s, bounds, r, em_kwargs) for (c, s), r in zip(starts, resp0)]
    if jobs > 1 and len(args) > 1:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=jobs)(delayed(_single_restart)(*a) for a in args)
    else:
        results = [_single_restart(*a) for a in args]
    finals = tuple(r.bound_trace[-1] for r in results)
    best = max(range(len(results)), key=lambda i: (finals[i], -i))
    model = replace(results[best], restart_bounds=finals)
    if not model.converged:
        warnings.warn("OMGP fit: EM iteration cap reached, returning best-so-far", RuntimeWarning)
    return model


# ---------------------------------------------------------------- prediction


def predict(model: OmgpModel, x_star, test_weights=None) -> ComponentPosterior:
    """Per-component predictive distributions of noisy observations at ``x_star``."""
    xs = np.asarray(x_star, dtype=float).ravel()
    x, y = model.training.x, model.training.y
    sigma = model.shared_noise_std
    means, covs = [], []
    for k, comp in enumerate(model.components):
        K, m = _stats(comp, x)
        sb = np.sqrt(model.responsibilities[:, k]) / sigma
        L = _factor(K, sb)
        alpha = sb * la.cho_solve(L, sb * (y - m))
        Ksx = gp.kernel_matrix(xs, x, comp.length_scale, comp.process_std)
        V = la.solve_lower(L, sb[:, None] * Ksx.T)
        cov = gp.kernel_matrix(xs, xs, comp.length_scale, comp.process_std) - V.T @ V
        means.append(gp.mean_function(comp, xs) + Ksx @ alpha)
        covs.append(0.5 * (cov + cov.T) + sigma**2 * np.eye(xs.size))
    weights = _weights(model.k, test_weights)
    return ComponentPosterior(xs, np.array(means), np.array(covs), weights)


def predict_marginals(model: OmgpModel, x_star):
    """Per-component predictive means and variances (no cross-covariances), each (K, M)."""
    xs = np.asarray(x_star, dtype=float).ravel()
    x, y = model.training.x, model.training.y
    sigma = model.shared_noise_std
    means, variances = [], []
    for k, comp in enumerate(model.components):
        K, m = _stats(comp, x)
        sb = np.sqrt(model.responsibilities[:, k]) / sigma
        L = _factor(K, sb)
        alpha = sb * la.cho_solve(L, sb * (y - m))
        Ksx = gp.kernel_matrix(xs, x, comp.length_scale, comp.process_std)
        V = la.solve_lower(L, sb[:, None] * Ksx.T)
        means.append(gp.mean_function(comp, xs) + Ksx @ alpha)
        variances.append(comp.process_std**2 - np.sum(V * V, axis=0) + sigma**2)
    return np.array(means), np.array(variances)


def _weights(k, test_weights):
    if test_weights is None:
        return np.full(k, 1.0 / k)
    w = np.asarray(test_weights, dtype=float)
    if w.shape != (k,) or np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-12):
        raise ValueError("test weights must be K nonnegative values summing to 1")
    return w


def evidence_from_posterior(post: ComponentPosterior, y_star) -> float:
    with np.errstate(divide="ignore"):
        return float(logsumexp(post.log_densities(y_star) + np.log(post.weights)))


def evidence(model: OmgpModel, x_star, y_star, test_weights=None) -> float:
    """Log marginal likelihood of a whole test function under the mixture."""
    return evidence_from_posterior(predict(model, x_star, test_weights), y_star)


def map_component(model: OmgpModel, x_star, y_star, test_weights=None) -> int:
    post = predict(model, x_star, test_weights)
    with np.errstate(divide="ignore"):
        scores = post.log_densities(y_star) + np.log(post.weights)
    return int(np.argmax(scores))


def pointwise_map(means, variances, y_star, weights=None) -> np.ndarray:
    """MAP component for each test point taken on its own (marginal densities)."""
    means, variances = np.asarray(means), np.asarray(variances)
    w = _weights(means.shape[0], weights)
    ll = -0.5 * (np.asarray(y_star)[None, :] - means) ** 2 / variances - 0.5 * np.log(2 * np.pi * variances)
    with np.errstate(divide="ignore"):
        ll += np.log(w)[:, None]
    return np.argmax(ll, axis=0)
