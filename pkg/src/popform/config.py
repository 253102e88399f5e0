"""Declarative experiment configuration (YAML or JSON) with explicit seeds."""
from __future__ import annotations

import copy
import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .gp import Bounds
from .modal import (DEFAULT_BAND, DEFAULT_STEP, ModalModel, PopulationSpec, frequency_grid,
                    population_from_models, synthesize_population)
from .novelty import DEFAULT_REDUCTIONS, ThresholdConfig
from .spectral import SpectralConfig, TABLE_DT

# Four members spread over ~2.5 Hz whose residues differ, so that the
# trajectories are separable from the real part alone.
DEFAULT_MEMBERS = (
    {"modes": [{"f_n_hz": 50.6, "zeta": 0.02, "residue": 0.5}]},
    {"modes": [{"f_n_hz": 51.4, "zeta": 0.02, "residue": 1.0}]},
    {"modes": [{"f_n_hz": 52.2, "zeta": 0.02, "residue": 2.0}]},
    {"modes": [{"f_n_hz": 53.1, "zeta": 0.02, "residue": 4.0}]},
)


@dataclass
class PopulationConfig:
    """Either explicit member models or a jittered population spec."""

    members: list | None = field(default_factory=lambda: [copy.deepcopy(m) for m in DEFAULT_MEMBERS])
    n_members: int = 4
    base_model: dict | None = None
    frequency_jitter: float = 0.025
    residue_jitter: float = 0.0
    damping_jitter: float = 0.0
    rng_seed: int | None = None

    def build(self, grid, seed: int):
        """List of ``(ModalModel, FrfRecord)`` on ``grid``."""
        if self.members:
            return population_from_models([ModalModel.from_dict(m) for m in self.members], grid)
        if self.base_model is None:
            raise ValueError("population needs either members or base_model")
        spec = PopulationSpec(self.n_members, ModalModel.from_dict(self.base_model), self.frequency_jitter,
                              self.residue_jitter, self.damping_jitter,
                              seed if self.rng_seed is None else self.rng_seed)
        return synthesize_population(spec, grid)


@dataclass
class TrainingConfig:
    n_copies: int = 20
    noise_fraction: float = 0.05
    mixture_points: int = 300
    pooled_points: int = 600
    omgp_points: int = 600


@dataclass
class GpConfig:
    bounds: dict = field(default_factory=lambda: Bounds().to_dict())
    restarts: int = 3
    method: str = "nelder-mead"

    @property
    def box(self) -> Bounds:
        return Bounds.from_dict(self.bounds)


@dataclass
class OmgpConfig:
    k: int = 4
    restarts: int = 10
    seeds_per_restart: int = 8
    e_tol: float = 1e-6
    e_max_iter: int = 200
    em_tol: float = 1e-6
    em_max_iter: int = 50
    m_step_method: str = "l-bfgs-b"

    def em_kwargs(self) -> dict:
        return {"tol": self.em_tol, "max_iter": self.em_max_iter, "e_tol": self.e_tol,
                "e_max_iter": self.e_max_iter, "method": self.m_step_method}


@dataclass
class NoveltyConfig:
    n_samples_per_trial: int = 1000
    n_trials: int = 1
    percentile: float = 99.0
    mode: str = "percentile"
    normal_copies: int = 1000
    sweep_replicas: int = 1000
    reductions: list = field(default_factory=lambda: list(DEFAULT_REDUCTIONS))
    posterior_samples: int = 10000

    def threshold_config(self, seed: int) -> ThresholdConfig:
        return ThresholdConfig(self.n_samples_per_trial, self.n_trials, self.percentile, seed, self.mode)


@dataclass
class SpectralSettings:
    dt: float = TABLE_DT
    block_size: int = 16384
    n_blocks: int = 20
    window: str = "hanning"
    overlap_fraction: float = 0.0

    @property
    def spectral_config(self) -> SpectralConfig:
        return SpectralConfig(self.block_size, self.n_blocks, self.window, self.overlap_fraction)


_SECTIONS = {
    "population": PopulationConfig,
    "training": TrainingConfig,
    "gp": GpConfig,
    "omgp": OmgpConfig,
    "novelty": NoveltyConfig,
    "spectral": SpectralSettings,
}


@dataclass
class ExperimentConfig:
    band: tuple = DEFAULT_BAND
    grid_step: float = DEFAULT_STEP
    seed: int = 0
    output_dir: str = "out"
    population: PopulationConfig = field(default_factory=PopulationConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    gp: GpConfig = field(default_factory=GpConfig)
    omgp: OmgpConfig = field(default_factory=OmgpConfig)
    novelty: NoveltyConfig = field(default_factory=NoveltyConfig)
    spectral: SpectralSettings = field(default_factory=SpectralSettings)

    def __post_init__(self):
        self.band = tuple(float(v) for v in self.band)
        if len(self.band) != 2 or not self.band[0] < self.band[1]:
            raise ValueError(f"band must be (f_lo, f_hi) with f_lo < f_hi, got {self.band}")
        if self.grid_step <= 0 or self.grid_step > self.band[1] - self.band[0]:
            raise ValueError("grid_step must be positive and fit inside the band")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)):
            raise ValueError("seed must be an explicit integer")
        Bounds.from_dict(self.gp.bounds)

    @property
    def grid(self) -> np.ndarray:
        return frequency_grid(self.band, self.grid_step)

    def stage_seed(self, stage: str) -> int:
        """Seed for one pipeline stage, derived from the master seed and the stage name."""
        ss = np.random.SeedSequence([int(self.seed), zlib.crc32(stage.encode())])
        return int(ss.generate_state(1)[0])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["band"] = list(self.band)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d or {})
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for name, value in d.items():
            if name in _SECTIONS:
                section = _SECTIONS[name]
                bad = set(value or {}) - {f.name for f in fields(section)}
                if bad:
                    raise ValueError(f"unknown keys in {name}: {sorted(bad)}")
                kwargs[name] = section(**(value or {}))
            else:
                kwargs[name] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        text = Path(path).read_text()
        return cls.from_dict(yaml.safe_load(text) or {})

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, **changes) -> "ExperimentConfig":
        """Copy with top-level fields or dotted section fields (``omgp.k``) replaced."""
        cfg = copy.deepcopy(self)
        for key, value in changes.items():
            if value is None:
                continue
            if "." in key:
                section, name = key.split(".", 1)
                setattr(cfg, section, replace(getattr(cfg, section), **{name: value}))
            else:
                setattr(cfg, key, value)
        cfg.__post_init__()
        return cfg

