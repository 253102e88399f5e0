"""Evidence-based novelty scoring, bootstrap thresholds, NMSE/MSD and damage sweeps."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import omgp
from .modal import FrfRecord, apply_damage, modal_frf, replicate_with_noise

GAUSSIAN_Z = 2.58
DEFAULT_REDUCTIONS = tuple(round(0.005 * i, 3) for i in range(1, 8))


@dataclass(frozen=True)
class FormPair:
    """Real- and imaginary-part OMGPs of one population, evaluated on ``grid``."""

    real_model: omgp.OmgpModel
    imag_model: omgp.OmgpModel
    band: tuple
    grid: np.ndarray | None = None

    def __post_init__(self):
        f_lo, f_hi = (float(v) for v in self.band)
        if not f_hi > f_lo:
            raise ValueError("band must satisfy f_lo < f_hi")
        object.__setattr__(self, "band", (f_lo, f_hi))
        if self.real_model.part != "real" or self.imag_model.part != "imaginary":
            raise ValueError("FormPair needs a real-part and an imaginary-part model")
        for m in (self.real_model, self.imag_model):
            x = m.training.x
            if x.min() < f_lo - 1e-9 or x.max() > f_hi + 1e-9:
                raise ValueError("model training inputs fall outside the band")
        grid = self.grid
        if grid is None:
            grid = np.unique(np.concatenate([self.real_model.training.x, self.imag_model.training.x]))
        grid = np.asarray(grid, dtype=float)
        if grid.ndim != 1 or grid.size < 1 or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be a strictly increasing 1-D array")
        if grid[0] < f_lo - 1e-9 or grid[-1] > f_hi + 1e-9:
            raise ValueError("grid must lie inside the band")
        object.__setattr__(self, "grid", grid)

    @cached_property
    def posteriors(self):
        """Predictive distributions on the grid, computed once per form."""
        return omgp.predict(self.real_model, self.grid), omgp.predict(self.imag_model, self.grid)


@dataclass(frozen=True)
class NoveltyVerdict:
    score: float
    threshold: float
    outlying: bool
    per_part: tuple

    def __post_init__(self):
        if self.outlying != (self.score > self.threshold):
            raise ValueError("outlying must equal score > threshold")


@dataclass(frozen=True)
class ThresholdConfig:
    n_samples_per_trial: int = 1000
    n_trials: int = 1
    percentile: float = 99.0
    rng_seed: int = 0
    mode: str = "percentile"  # or "gaussian": mean + GAUSSIAN_Z * std

    def __post_init__(self):
        if self.n_samples_per_trial < 1 or self.n_trials < 1:
            raise ValueError("sample and trial counts must be >= 1")
        if not 0.0 < self.percentile < 100.0:
            raise ValueError("percentile must lie in (0, 100)")
        if self.mode not in ("percentile", "gaussian"):
            raise ValueError("mode must be 'percentile' or 'gaussian'")


def resample(form: FormPair, test) -> np.ndarray:
    """Complex test values on the form grid by linear interpolation.

    ``test`` is an :class:`FrfRecord` or a ``(frequencies, values)`` pair in
    any bin order. Points of the form grid outside the test span are refused.
    """
    if isinstance(test, FrfRecord):
        f, v = test.frequencies, test.values
    else:
        f, v = (np.asarray(a) for a in test)
    f = np.asarray(f, dtype=float)
    v = np.asarray(v, dtype=complex)
    if f.shape != v.shape or f.ndim != 1 or f.size == 0:
        raise ValueError("test frequencies and values must be equal-length 1-D arrays")
    order = np.argsort(f, kind="stable")
    f, v = f[order], v[order]
    if np.any(np.diff(f) <= 0):
        raise ValueError("test frequencies contain duplicates")
    grid = form.grid
    if f[-1] < form.band[0] or f[0] > form.band[1]:
        raise ValueError(f"test grid [{f[0]:g}, {f[-1]:g}] Hz is disjoint from the band {form.band}")
    tol = 1e-9 * max(1.0, abs(grid[-1]))
    if f[0] > grid[0] + tol or f[-1] < grid[-1] - tol:
        raise ValueError(
            f"test grid [{f[0]:g}, {f[-1]:g}] Hz does not cover the model grid "
            f"[{grid[0]:g}, {grid[-1]:g}] Hz; extrapolation is refused"
        )
    if f.size == grid.size and np.allclose(f, grid, rtol=0, atol=tol):
        return v
    return np.interp(grid, f, v.real) + 1j * np.interp(grid, f, v.imag)


def score_parts(form: FormPair, test) -> tuple:
    """Negative log evidence of the real and imaginary parts."""
    v = resample(form, test)
    post_re, post_im = form.posteriors
    return -omgp.evidence_from_posterior(post_re, v.real), -omgp.evidence_from_posterior(post_im, v.imag)


def novelty_score(form: FormPair, test) -> float:
    """-log p(Re y*) - log p(Im y*) under the form (uniform component weights)."""
    re, im = score_parts(form, test)
    return re + im


def verdict(form: FormPair, test, threshold: float) -> NoveltyVerdict:
    re, im = score_parts(form, test)
    score = re + im
    return NoveltyVerdict(score, float(threshold), bool(score > threshold), (re, im))


def bootstrap_samples(scores, cfg: ThresholdConfig) -> np.ndarray:
    """Pooled scores from ``n_trials`` draws of ``n_samples_per_trial`` with replacement."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("no normal-condition scores to bootstrap")
    rng = np.random.default_rng(cfg.rng_seed)
    idx = rng.integers(0, scores.size, size=(cfg.n_trials, cfg.n_samples_per_trial))
    return scores[idx].ravel()


def threshold_from_scores(scores, cfg: ThresholdConfig | None = None) -> float:
    cfg = cfg or ThresholdConfig()
    pooled = bootstrap_samples(scores, cfg)
    if cfg.mode == "gaussian":
        return float(np.mean(pooled) + GAUSSIAN_Z * np.std(pooled))
    return float(np.percentile(pooled, cfg.percentile))


def threshold_report(scores, cfg: ThresholdConfig | None = None) -> dict:
    """Threshold plus summary statistics of the pooled bootstrap scores."""
    cfg = cfg or ThresholdConfig()
    pooled = bootstrap_samples(scores, cfg)
    return {
        "threshold": threshold_from_scores(scores, cfg),
        "mode": cfg.mode,
        "percentile": cfg.percentile,
        "n_samples_per_trial": cfg.n_samples_per_trial,
        "n_trials": cfg.n_trials,
        "rng_seed": cfg.rng_seed,
        "n_normal": int(np.size(scores)),
        "pooled": {
            "count": int(pooled.size),
            "mean": float(np.mean(pooled)),
            "std": float(np.std(pooled)),
            "min": float(np.min(pooled)),
            "median": float(np.median(pooled)),
            "max": float(np.max(pooled)),
        },
    }


def bootstrap_threshold(form: FormPair, normal_data, cfg: ThresholdConfig | None = None) -> float:
    """Threshold from normal-condition FRFs; each record is scored once."""
    normal_data = list(normal_data)
    if not normal_data:
        raise ValueError("normal_data is empty")
    return threshold_from_scores([novelty_score(form, f) for f in normal_data], cfg)


def nmse(prediction_mean, y_star) -> float:
    """Normalised mean squared error in percent (population variance of y*)."""
    mu = np.asarray(prediction_mean, dtype=float)
    y = np.asarray(y_star, dtype=float)
    if mu.shape != y.shape or mu.ndim != 1 or y.size < 2:
        raise ValueError("need equal-length vectors with at least two entries")
    var = np.var(y)
    if var == 0:
        raise ValueError("y_star has zero variance")
    r = mu - y
    return float(100.0 * (r @ r) / (y.size * var))


def msd(prediction_mean, prediction_var_diag, y_star) -> float:
    """Mean squared residual normalised by the predictive variance."""
    mu = np.asarray(prediction_mean, dtype=float)
    var = np.asarray(prediction_var_diag, dtype=float)
    y = np.asarray(y_star, dtype=float)
    if not (mu.shape == var.shape == y.shape) or mu.ndim != 1 or y.size == 0:
        raise ValueError("need three equal-length vectors")
    if np.any(var <= 0):
        raise ValueError("predictive variances must be > 0")
    return float(np.mean((mu - y) ** 2 / var))


def member_seed(rng_seed: int, member: int) -> int:
    """Noise seed for one member; the reduction level does not enter it."""
    return int(np.random.SeedSequence([int(rng_seed), int(member)]).generate_state(1)[0])


def score_replicas(form: FormPair, frf: FrfRecord, n_replicas: int, noise_fraction: float, rng_seed: int):
    """Scores ``(real, imag)`` of noisy copies of ``frf``, shape (n_replicas, 2)."""
    copies = replicate_with_noise(frf, n_replicas, noise_fraction, rng_seed)
    return np.array([score_parts(form, c) for c in copies])


@dataclass(frozen=True)
class SweepTable:
    member: np.ndarray
    reduction_pct: np.ndarray
    replica: np.ndarray
    score_real: np.ndarray
    score_imag: np.ndarray
    threshold: float | None = None

    HEADER = ("member", "reduction_pct", "replica", "score_real", "score_imag", "score_total", "outlying")

    @property
    def score_total(self) -> np.ndarray:
        return self.score_real + self.score_imag

    @property
    def outlying(self):
        if self.threshold is None:
            return None
        return self.score_total > self.threshold

    def scores(self, member: int, reduction_pct: float) -> np.ndarray:
        keep = (self.member == member) & np.isclose(self.reduction_pct, reduction_pct)
        return self.score_total[keep]

    def medians(self, member: int) -> tuple:
        """(reductions, median total score) for one member."""
        red = np.unique(self.reduction_pct[self.member == member])
        return red, np.array([np.median(self.scores(member, r)) for r in red])

    def rows(self):
        out = self.outlying
        for i in range(self.member.size):
            flag = "" if out is None else int(out[i])
            yield (int(self.member[i]), float(self.reduction_pct[i]), int(self.replica[i]),
                   float(self.score_real[i]), float(self.score_imag[i]), float(self.score_total[i]), flag)


def damage_sweep(form: FormPair, base_models, reductions=DEFAULT_REDUCTIONS, n_replicas: int = 1000,
                 noise_fraction: float = 0.05, rng_seed: int = 0, threshold: float | None = None,
                 frequencies=None) -> SweepTable:
    """Score noisy copies of every member's FRF at every natural-frequency reduction.

    The noise for a member is drawn from the same seed at every reduction, so
    differences between reductions are not masked by sampling noise.
    """
    grid = form.grid if frequencies is None else np.asarray(frequencies, dtype=float)
    cols = {k: [] for k in ("member", "reduction", "replica", "re", "im")}
    for j, model in enumerate(base_models):
        seed = member_seed(rng_seed, j)
        for r in reductions:
            frf = modal_frf(apply_damage(model, float(r)), grid, {"member": j, "reduction": float(r)})
            s = score_replicas(form, frf, n_replicas, noise_fraction, seed)
            cols["member"].append(np.full(n_replicas, j))
            cols["reduction"].append(np.full(n_replicas, round(100.0 * float(r), 10)))
            cols["replica"].append(np.arange(n_replicas))
            cols["re"].append(s[:, 0])
            cols["im"].append(s[:, 1])
    cat = {k: np.concatenate(v) if v else np.array([]) for k, v in cols.items()}
    return SweepTable(cat["member"].astype(int), cat["reduction"], cat["replica"].astype(int),
                      cat["re"], cat["im"], threshold)
