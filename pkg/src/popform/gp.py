"""Single-output GP regression with a squared-exponential kernel and a modal mean.

Hyperparameters are optimised in a transformed space::

    [log l, log sigma_f, (f_n, log zeta, log|A|) per mode, log sigma]

Residue signs are fixed by the initial mean parameters and never flip.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import linalg as la
from .modal import ModalModel, Mode, accelerance
from .optim import minimize_box

PARTS = ("real", "imaginary")


@dataclass(frozen=True)
class Hyperparameters:
    length_scale: float
    process_std: float
    noise_std: float
    mean_params: ModalModel
    part: str = "real"

    def __post_init__(self):
        if self.length_scale <= 0:
            raise ValueError("length_scale must be > 0")
        if self.process_std <= 0:
            raise ValueError("process_std must be > 0")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.part not in PARTS:
            raise ValueError(f"part must be one of {PARTS}, got {self.part!r}")

    def to_dict(self) -> dict:
        return {
            "length_scale": self.length_scale,
            "process_std": self.process_std,
            "noise_std": self.noise_std,
            "mean_params": self.mean_params.to_dict(),
            "part": self.part,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparameters":
        return cls(
            float(d["length_scale"]),
            float(d["process_std"]),
            float(d["noise_std"]),
            ModalModel.from_dict(d["mean_params"]),
            d.get("part", "real"),
        )


@dataclass(frozen=True)
class Bounds:
    """Box constraints; ``residue`` bounds apply to the residue magnitude."""

    length_scale: tuple = (0.05, 20.0)
    process_std: tuple = (1e-3, 1e3)
    noise_std: tuple = (1e-4, 1e2)
    natural_frequency: tuple = (40.0, 60.0)
    damping_ratio: tuple = (1e-3, 0.3)
    residue: tuple = (1e-3, 1e3)

    def __post_init__(self):
        for name, (lo, hi) in self.items():
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo >= hi:
                raise ValueError(f"bad bounds for {name}: ({lo}, {hi})")
            if name != "natural_frequency" and lo <= 0:
                raise ValueError(f"lower bound for {name} must be > 0")

    def items(self):
        for name in ("length_scale", "process_std", "noise_std",
                     "natural_frequency", "damping_ratio", "residue"):
            yield name, tuple(float(v) for v in getattr(self, name))

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in self.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "Bounds":
        return cls(**{k: tuple(v) for k, v in d.items()})

    def contains(self, hyper: Hyperparameters, check_noise=True) -> bool:
        def inside(v, b):
            return b[0] * (1 - 1e-12) <= v <= b[1] * (1 + 1e-12)

        ok = inside(hyper.length_scale, self.length_scale) and inside(hyper.process_std, self.process_std)
        if check_noise:
            ok = ok and inside(hyper.noise_std, self.noise_std)
        for m in hyper.mean_params.modes:
            ok = ok and inside(m.natural_frequency, self.natural_frequency)
            ok = ok and inside(m.damping_ratio, self.damping_ratio)
            ok = ok and inside(abs(m.residue), self.residue)
        return bool(ok)


@dataclass(frozen=True)
class TrainingSet:
    x: np.ndarray
    y: np.ndarray
    part: str = "real"
    residue_sign: int = 1

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        if x.shape != y.shape or x.size < 2:
            raise ValueError("x and y must have the same length >= 2")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("training data must be finite")
        if self.part not in PARTS:
            raise ValueError(f"part must be one of {PARTS}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.x.size

    def subset(self, idx) -> "TrainingSet":
        return replace(self, x=self.x[idx], y=self.y[idx])


@dataclass(frozen=True)
class Posterior:
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def variance(self) -> np.ndarray:
        return np.diag(self.covariance).copy()


@dataclass(frozen=True)
class GpModel:
    hyper: Hyperparameters
    training: TrainingSet
    chol: np.ndarray  # lower factor of K_xx + R (+ jitter)
    alpha: np.ndarray  # (K_xx + R)^-1 (y - m)
    jitter: float
    nlml: float
    bounds: Bounds = field(default_factory=Bounds)
    converged: bool = True
    message: str = ""


# ---------------------------------------------------------------- kernel/mean


def sq_exp_kernel(x1, x2, hyper: Hyperparameters):
    """sigma_f^2 exp(-(x1 - x2)^2 / (2 l^2)); broadcasts like numpy."""
    d = np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)
    return hyper.process_std**2 * np.exp(-0.5 * d**2 / hyper.length_scale**2)


def kernel_matrix(xa, xb, length_scale, process_std):
    d = np.asarray(xa, dtype=float)[:, None] - np.asarray(xb, dtype=float)[None, :]
    return process_std**2 * np.exp(-0.5 * d**2 / length_scale**2)


def _kernel_and_grads(x, length_scale, process_std):
    d2 = (x[:, None] - x[None, :]) ** 2
    K = process_std**2 * np.exp(-0.5 * d2 / length_scale**2)
    return K, (K * d2 / length_scale**2, 2.0 * K)


def _take(h, part):
    return h.real if part == "real" else h.imag


def mean_function(hyper: Hyperparameters, x) -> np.ndarray:
    """Real or imaginary part of the modal accelerance at ``x`` (Hz)."""
    return modal_mean(hyper.mean_params, hyper.part, x)


def modal_mean(model: ModalModel, part: str, x) -> np.ndarray:
    omega = 2.0 * np.pi * np.asarray(x, dtype=float)
    h = np.zeros(omega.shape, dtype=complex)
    for m in model.modes:
        h += accelerance(omega, m.natural_frequency, m.damping_ratio, m.residue)
    return _take(h, part)


def _mean_and_grads(model: ModalModel, part: str, x):
    """Mean vector and d(mean)/d(f_n, log zeta, log|A|) per mode, shape (3*modes, N)."""
    omega = 2.0 * np.pi * x
    h_total = np.zeros(x.shape, dtype=complex)
    grads = []
    for m in model.modes:
        wn = m.omega
        den = wn**2 - omega**2 + 2j * m.damping_ratio * omega * wn
        h = -(omega**2) * m.residue / den
        h_total += h
        common = omega**2 * m.residue / den**2
        d_fn = 2.0 * np.pi * common * (2.0 * wn + 2j * m.damping_ratio * omega)
        d_logzeta = m.damping_ratio * common * (2j * omega * wn)
        grads.extend([_take(d_fn, part), _take(d_logzeta, part), _take(h, part)])
    return _take(h_total, part), np.array(grads)


# ---------------------------------------------------------------- packing


def pack(hyper: Hyperparameters, with_noise=True) -> np.ndarray:
    z = [np.log(hyper.length_scale), np.log(hyper.process_std)]
    for m in hyper.mean_params.modes:
        z += [m.natural_frequency, np.log(m.damping_ratio), np.log(abs(m.residue))]
    if with_noise:
        z.append(np.log(hyper.noise_std))
    return np.array(z, dtype=float)


def unpack(z, template: Hyperparameters, noise_std=None) -> Hyperparameters:
    """Inverse of :func:`pack`; residue signs come from ``template``."""
    z = np.asarray(z, dtype=float)
    modes = []
    for j, m in enumerate(template.mean_params.modes):
        fn, lz, la_ = z[2 + 3 * j: 5 + 3 * j]
        modes.append(Mode(float(fn), float(np.exp(lz)), float(np.sign(m.residue) * np.exp(la_))))
    n_mean = 3 * len(modes)
    if noise_std is None:
        noise_std = float(np.exp(z[2 + n_mean]))
    return Hyperparameters(
        float(np.exp(z[0])),
        float(np.exp(z[1])),
        noise_std,
        ModalModel(tuple(modes), template.mean_params.dof_pair),
        template.part,
    )


def box(bounds: Bounds, n_modes: int, with_noise=True):
    lo = [np.log(bounds.length_scale[0]), np.log(bounds.process_std[0])]
    hi = [np.log(bounds.length_scale[1]), np.log(bounds.process_std[1])]
    for _ in range(n_modes):
        lo += [bounds.natural_frequency[0], np.log(bounds.damping_ratio[0]), np.log(bounds.residue[0])]
        hi += [bounds.natural_frequency[1], np.log(bounds.damping_ratio[1]), np.log(bounds.residue[1])]
    if with_noise:
        lo.append(np.log(bounds.noise_std[0]))
        hi.append(np.log(bounds.noise_std[1]))
    return np.array(lo), np.array(hi)


# ---------------------------------------------------------------- likelihood


def _factorize(hyper: Hyperparameters, data: TrainingSet):
    K = kernel_matrix(data.x, data.x, hyper.length_scale, hyper.process_std)
    C = K + hyper.noise_std**2 * np.eye(len(data))
    L, jitter = la.jittered_cholesky(C, hyper.process_std**2)
    return L, jitter


def nlml(hyper: Hyperparameters, data: TrainingSet) -> float:
    """Negative log marginal likelihood of the training data."""
    L, _ = _factorize(hyper, data)
    r = data.y - mean_function(hyper, data.x)
    z = la.solve_lower(L, r)
    return float(0.5 * len(data) * la.LOG_2PI + 0.5 * la.logdet_from_chol(L) + 0.5 * z @ z)


def nlml_and_grad(z, template: Hyperparameters, data: TrainingSet):
    """nlml and its gradient with respect to the packed vector ``z``."""
    hyper = unpack(z, template)
    x, n = data.x, len(data)
    K, dK = _kernel_and_grads(x, hyper.length_scale, hyper.process_std)
    m, dm = _mean_and_grads(hyper.mean_params, hyper.part, x)
    C = K + hyper.noise_std**2 * np.eye(n)
    L, _ = la.jittered_cholesky(C, hyper.process_std**2)
    r = data.y - m
    a = la.cho_solve(L, r)
    value = 0.5 * n * la.LOG_2PI + 0.5 * la.logdet_from_chol(L) + 0.5 * r @ a
    Ci = la.cho_solve(L, np.eye(n))
    inner = Ci - np.outer(a, a)
    grad = np.empty_like(z)
    grad[0] = 0.5 * np.sum(inner * dK[0])
    grad[1] = 0.5 * np.sum(inner * dK[1])
    grad[2: 2 + dm.shape[0]] = -dm @ a
    grad[-1] = hyper.noise_std**2 * np.trace(inner)
    return float(value), grad


# ---------------------------------------------------------------- fit/predict


def build_model(hyper: Hyperparameters, data: TrainingSet, bounds: Bounds | None = None,
                converged=True, message="") -> GpModel:
    L, jitter = _factorize(hyper, data)
    r = data.y - mean_function(hyper, data.x)
    alpha = la.cho_solve(L, r)
    z = la.solve_lower(L, r)
    value = float(0.5 * len(data) * la.LOG_2PI + 0.5 * la.logdet_from_chol(L) + 0.5 * z @ z)
    return GpModel(hyper, data, L, alpha, jitter, value, bounds or Bounds(), converged, message)


def random_start(rng, init: Hyperparameters, bounds: Bounds, x, spread=3.0) -> Hyperparameters:
    """Random restart point: natural frequencies uniform over the data range,
    scale-type parameters log-uniform within ``init / spread .. init * spread``."""

    def logu(v, b):
        lo = max(b[0], v / spread)
        hi = min(b[1], v * spread)
        return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))

    f_lo = max(bounds.natural_frequency[0], float(np.min(x)))
    f_hi = min(bounds.natural_frequency[1], float(np.max(x)))
    n_modes = len(init.mean_params.modes)
    fns = np.sort(rng.uniform(f_lo, f_hi, size=n_modes))
    if n_modes > 1 and np.any(np.diff(fns) <= 0):
        fns = np.linspace(f_lo, f_hi, n_modes + 2)[1:-1]
    modes = tuple(
        Mode(float(fn), logu(m.damping_ratio, bounds.damping_ratio),
             float(np.sign(m.residue)) * logu(abs(m.residue), bounds.residue))
        for fn, m in zip(fns, init.mean_params.modes)
    )
    return Hyperparameters(
        logu(init.length_scale, bounds.length_scale),
        logu(init.process_std, bounds.process_std),
        logu(init.noise_std, bounds.noise_std),
        ModalModel(modes, init.mean_params.dof_pair),
        init.part,
    )


def _objective(template, data, use_grad):
    def f(z):
        try:
            if use_grad:
                return nlml_and_grad(z, template, data)
            return nlml(unpack(z, template), data)
        except (la.FactorizationError, ValueError, FloatingPointError):
            return (np.inf, np.zeros_like(z)) if use_grad else np.inf
    return f


def fit(data: TrainingSet, bounds: Bounds, init: Hyperparameters, restarts: int = 1,
        rng_seed: int = 0, method: str = "nelder-mead", maxiter: int | None = None,
        jobs: int = 1) -> GpModel:
    """Type-II maximum likelihood fit with bounded multi-start optimisation.

    Restart 0 starts at ``init``; later restarts start at :func:`random_start`
    points. The lowest nlml wins, ties going to the lowest restart index. If the
    optimiser hits its iteration cap the best point is still returned, with
    ``converged=False``.
    """
    if init.part != data.part:
        raise ValueError(f"init part {init.part!r} does not match data part {data.part!r}")
    if not bounds.contains(init):
        raise ValueError("initial hyperparameters lie outside the bounds")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    rng = np.random.default_rng(rng_seed)
    starts = [init] + [random_start(rng, init, bounds, data.x) for _ in range(restarts - 1)]
    lo, hi = box(bounds, len(init.mean_params.modes))
    use_grad = method.lower() != "nelder-mead"
    fun = _objective(init, data, use_grad)

    def run(h):
        return minimize_box(fun, pack(h), lo, hi, method=method, jac=use_grad, maxiter=maxiter)

    if jobs > 1 and restarts > 1:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=jobs)(delayed(run)(h) for h in starts)
    else:
        results = [run(h) for h in starts]
    best = min(range(len(results)), key=lambda i: (results[i].fun, i))
    res = results[best]
    if not res.converged:
        warnings.warn(f"GP fit: optimiser stopped before convergence ({res.message})", RuntimeWarning)
    hyper = unpack(res.x, init)
    return build_model(hyper, data, bounds, res.converged, res.message)


def predict(model: GpModel, x_star, full_cov: bool = True) -> Posterior:
    """Predictive distribution of noisy observations at ``x_star``."""
    h = model.hyper
    xs = np.asarray(x_star, dtype=float).ravel()
    Ksx = kernel_matrix(xs, model.training.x, h.length_scale, h.process_std)
    mu = mean_function(h, xs) + Ksx @ model.alpha
    V = la.solve_lower(model.chol, Ksx.T)
    if full_cov:
        cov = kernel_matrix(xs, xs, h.length_scale, h.process_std) - V.T @ V
        cov = 0.5 * (cov + cov.T) + h.noise_std**2 * np.eye(xs.size)
    else:
        cov = np.diag(h.process_std**2 - np.sum(V * V, axis=0) + h.noise_std**2)
    return Posterior(mu, cov)


def default_init(data: TrainingSet, bounds: Bounds, zeta=0.02, length_scale=1.0) -> Hyperparameters:
    """Data-driven single-mode starting point: peak location and peak height."""
    i = int(np.argmax(np.abs(data.y)))
    f_n = float(np.clip(data.x[i], *bounds.natural_frequency))
    peak = float(np.max(np.abs(data.y)))
    residue = data.residue_sign * float(np.clip(2.0 * zeta * peak, *bounds.residue))
    spread = float(np.std(data.y)) or 1.0
    return Hyperparameters(
        float(np.clip(length_scale, *bounds.length_scale)),
        float(np.clip(0.1 * spread, *bounds.process_std)),
        float(np.clip(0.1 * spread, *bounds.noise_std)),
        ModalModel((Mode(f_n, float(np.clip(zeta, *bounds.damping_ratio)), residue),)),
        data.part,
    )
