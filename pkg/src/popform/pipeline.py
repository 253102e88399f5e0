"""The population-form protocol: replicate, split, fit and evaluate.

Every member FRF is copied with peak-scaled noise, training points are drawn
without replacement and the remaining points form the held-out set. The
supervised mixture fits one GP per member, the single GP pools all members,
and the form is a pair of OMGPs (real part first, imaginary part initialised
from it).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import gp, omgp
from .gp import Bounds, GpModel, TrainingSet
from .modal import modal_frf, replicate_with_noise
from .novelty import FormPair, member_seed, msd, nmse


@dataclass(frozen=True)
class ReplicatedData:
    """Concatenated noisy copies of every member FRF."""

    x: np.ndarray
    values: np.ndarray
    member: np.ndarray
    n_members: int

    def part(self, name: str) -> np.ndarray:
        return self.values.real if name == "real" else self.values.imag

    def member_indices(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.member == j)


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    test: np.ndarray


@dataclass(frozen=True)
class FitReport:
    part: str
    nmse: float
    msd: float
    n_test: int
    objective: float  # nlml (GP) or final L_bc (OMGP)


def replicate_population(frfs, n_copies: int = 20, noise_fraction: float = 0.05,
                         rng_seed: int = 0) -> ReplicatedData:
    xs, vs, ms = [], [], []
    for j, frf in enumerate(frfs):
        for c in replicate_with_noise(frf, n_copies, noise_fraction, member_seed(rng_seed, j)):
            xs.append(c.frequencies)
            vs.append(c.values)
            ms.append(np.full(len(c), j))
    return ReplicatedData(np.concatenate(xs), np.concatenate(vs), np.concatenate(ms), len(frfs))


def _draw(pool: np.ndarray, n: int, rng) -> Split:
    if n > pool.size:
        raise ValueError(f"asked for {n} training points from {pool.size}")
    take = np.sort(rng.choice(pool, size=n, replace=False))
    return Split(take, np.setdiff1d(pool, take))


def member_splits(data: ReplicatedData, n_per_member: int, rng_seed: int) -> list:
    rng = np.random.default_rng(rng_seed)
    return [_draw(data.member_indices(j), n_per_member, rng) for j in range(data.n_members)]


def pooled_split(data: ReplicatedData, n_points: int, rng_seed: int) -> Split:
    return _draw(np.arange(data.x.size), n_points, np.random.default_rng(rng_seed))


def residue_sign(models) -> int:
    """Common sign of the leading residue of every member (taken as known)."""
    signs = {int(np.sign(m.modes[0].residue)) for m in models}
    if len(signs) != 1:
        raise ValueError("members disagree on the sign of the resonance")
    return signs.pop()


def training_set(data: ReplicatedData, idx, part: str, sign: int = 1) -> TrainingSet:
    return TrainingSet(data.x[idx], data.part(part)[idx], part, sign)


def fit_gp(ts: TrainingSet, bounds: Bounds, restarts: int = 3, rng_seed: int = 0,
           method: str = "nelder-mead", init=None, jobs: int = 1) -> GpModel:
    init = init or gp.default_init(ts, bounds)
    return gp.fit(ts, bounds, init, restarts=restarts, rng_seed=rng_seed, method=method, jobs=jobs)


def gp_report(model: GpModel, data: ReplicatedData, idx, part: str) -> FitReport:
    post = gp.predict(model, data.x[idx], full_cov=False)
    y = data.part(part)[idx]
    var = np.diag(post.covariance)
    return FitReport(part, nmse(post.mean, y), msd(post.mean, var, y), int(np.size(idx)), model.nlml)


def fit_supervised_mixture(data: ReplicatedData, splits, part: str, bounds: Bounds, sign: int = 1,
                           restarts: int = 3, rng_seed: int = 0, method: str = "nelder-mead",
                           jobs: int = 1):
    """One GP per member; returns the models and a report over all held-out points."""
    models = [
        fit_gp(training_set(data, s.train, part, sign), bounds, restarts, rng_seed + j, method, jobs=jobs)
        for j, s in enumerate(splits)
    ]
    mus, vars_, ys = [], [], []
    for model, s in zip(models, splits):
        post = gp.predict(model, data.x[s.test], full_cov=False)
        mus.append(post.mean)
        vars_.append(np.diag(post.covariance))
        ys.append(data.part(part)[s.test])
    mu, var, y = np.concatenate(mus), np.concatenate(vars_), np.concatenate(ys)
    report = FitReport(part, nmse(mu, y), msd(mu, var, y), int(y.size), float(sum(m.nlml for m in models)))
    return models, report


def fit_single_gp(data: ReplicatedData, split: Split, part: str, bounds: Bounds, sign: int = 1,
                  restarts: int = 3, rng_seed: int = 0, method: str = "nelder-mead", jobs: int = 1):
    model = fit_gp(training_set(data, split.train, part, sign), bounds, restarts, rng_seed, method, jobs=jobs)
    return model, gp_report(model, data, split.test, part)


def omgp_report(model: omgp.OmgpModel, data: ReplicatedData, idx, part: str) -> FitReport:
    """Held-out metrics with every point predicted by its own MAP component."""
    means, variances = omgp.predict_marginals(model, data.x[idx])
    y = data.part(part)[idx]
    k = omgp.pointwise_map(means, variances, y)
    cols = np.arange(y.size)
    mu, var = means[k, cols], variances[k, cols]
    return FitReport(part, nmse(mu, y), msd(mu, var, y), int(y.size), model.bound_trace[-1])


def fit_form(data: ReplicatedData, split: Split, k: int, bounds: Bounds, band, grid=None, sign: int = 1,
             restarts: int = 10, rng_seed: int = 0, jobs: int = 1, **omgp_kwargs):
    """Fit the real-part OMGP, then the imaginary part initialised from it."""
    real_ts = training_set(data, split.train, "real", sign)
    imag_ts = training_set(data, split.train, "imaginary", sign)
    real = omgp.fit(real_ts, k, bounds, restarts=restarts, rng_seed=rng_seed, jobs=jobs, **omgp_kwargs)
    init = tuple(replace(c, part="imaginary") for c in real.components)
    ratio = np.max(np.abs(imag_ts.y)) / np.max(np.abs(real_ts.y))
    imag_sigma = float(np.clip(real.shared_noise_std * ratio, *bounds.noise_std))
    imag = omgp.fit(imag_ts, k, bounds, restarts=restarts, rng_seed=rng_seed + 1, init=init,
                    init_noise_std=imag_sigma, jobs=jobs, **omgp_kwargs)
    form = FormPair(real, imag, band, grid)
    reports = (omgp_report(real, data, split.test, "real"), omgp_report(imag, data, split.test, "imaginary"))
    return form, reports


def clean_frfs(models, grid) -> list:
    return [modal_frf(m, grid, {"structure_id": f"member_{j:02d}", "condition": "undamaged"})
            for j, m in enumerate(models)]


def normal_replicas(frfs, n_copies: int, noise_fraction: float, rng_seed: int) -> list:
    """Noisy copies of every member FRF, keyed by member seed (for thresholds)."""
    out = []
    for j, frf in enumerate(frfs):
        out.extend(replicate_with_noise(frf, n_copies, noise_fraction, member_seed(rng_seed, j)))
    return out

