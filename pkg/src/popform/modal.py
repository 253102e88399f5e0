"""Modal accelerance FRFs, synthetic populations, noisy replicas and damage."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

DEFAULT_BAND = (48.0, 56.0)
DEFAULT_STEP = 4.88e-2  # Hz, fixed-free acquisition frequency step


@dataclass(frozen=True)
class Mode:
    """One vibration mode: natural frequency (Hz), damping ratio and residue."""

    natural_frequency: float
    damping_ratio: float
    residue: float

    def __post_init__(self):
        if not np.isfinite(self.natural_frequency) or self.natural_frequency <= 0:
            raise ValueError(f"natural_frequency must be > 0, got {self.natural_frequency}")
        if not 0.0 < self.damping_ratio < 1.0:
            raise ValueError(f"damping_ratio must lie in (0, 1), got {self.damping_ratio}")
        if not np.isfinite(self.residue) or self.residue == 0.0:
            raise ValueError(f"residue must be finite and nonzero, got {self.residue}")

    @property
    def omega(self) -> float:
        return 2.0 * np.pi * self.natural_frequency


@dataclass(frozen=True)
class ModalModel:
    modes: tuple
    dof_pair: tuple = (0, 0)

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "dof_pair", tuple(int(i) for i in self.dof_pair))
        if not self.modes:
            raise ValueError("a modal model needs at least one mode")
        fn = [m.natural_frequency for m in self.modes]
        if any(b <= a for a, b in zip(fn, fn[1:])):
            raise ValueError(f"natural frequencies must be strictly increasing, got {fn}")

    @property
    def natural_frequencies(self) -> np.ndarray:
        return np.array([m.natural_frequency for m in self.modes])

    def to_dict(self) -> dict:
        return {
            "modes": [
                {"f_n_hz": m.natural_frequency, "zeta": m.damping_ratio, "residue": m.residue}
                for m in self.modes
            ],
            "dof_pair": list(self.dof_pair),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModalModel":
        modes = [Mode(float(m["f_n_hz"]), float(m["zeta"]), float(m["residue"])) for m in d["modes"]]
        return cls(tuple(modes), tuple(d.get("dof_pair", (0, 0))))


def single_mode(f_n: float, zeta: float, residue: float) -> ModalModel:
    return ModalModel((Mode(f_n, zeta, residue),))


@dataclass(frozen=True)
class FrfRecord:
    """Complex FRF values on an increasing frequency grid (Hz)."""

    frequencies: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        v = np.asarray(self.values, dtype=complex)
        if f.ndim != 1 or v.shape != f.shape:
            raise ValueError("frequencies and values must be 1-D arrays of equal length")
        if f.size and np.any(np.diff(f) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "meta", dict(self.meta))

    def __len__(self):
        return self.frequencies.size

    @property
    def real(self) -> np.ndarray:
        return self.values.real

    @property
    def imag(self) -> np.ndarray:
        return self.values.imag

    def part(self, name: str) -> np.ndarray:
        if name == "real":
            return self.values.real
        if name == "imaginary":
            return self.values.imag
        raise ValueError(f"unknown part {name!r}")

    def band(self, f_lo: float, f_hi: float) -> "FrfRecord":
        keep = (self.frequencies >= f_lo) & (self.frequencies <= f_hi)
        return FrfRecord(self.frequencies[keep], self.values[keep], self.meta)


def frequency_grid(band=DEFAULT_BAND, step=DEFAULT_STEP) -> np.ndarray:
    """Inclusive grid from band[0] with the given step, never exceeding band[1]."""
    f_lo, f_hi = band
    if step <= 0 or f_hi <= f_lo:
        raise ValueError("need step > 0 and f_hi > f_lo")
    n = int(np.floor((f_hi - f_lo) / step + 1e-9)) + 1
    return f_lo + step * np.arange(n)


def accelerance(omega, f_n, zeta, residue) -> np.ndarray:
    """Single-mode accelerance at angular frequencies ``omega`` (rad/s, any sign).

    ``f_n`` is in Hz. Broadcasts over array arguments.
    """
    omega = np.asarray(omega, dtype=float)
    wn = 2.0 * np.pi * np.asarray(f_n, dtype=float)
    den = wn**2 - omega**2 + 2j * zeta * omega * wn
    return -(omega**2) * residue / den


def _modal_sum(omega, modes) -> np.ndarray:
    out = np.zeros(np.shape(omega), dtype=complex)
    for m in modes:
        out += accelerance(omega, m.natural_frequency, m.damping_ratio, m.residue)
    return out


def modal_frf(model: ModalModel, frequencies, meta: dict | None = None) -> FrfRecord:
    """Accelerance FRF of a modal model on a grid in Hz."""
    f = np.asarray(frequencies, dtype=float)
    if f.ndim != 1 or f.size == 0:
        raise ValueError("frequency grid must be a non-empty 1-D array")
    if np.any(np.diff(f) <= 0):
        raise ValueError("frequency grid must be strictly increasing")
    if f[0] < 0:
        raise ValueError("frequency grid must be nonnegative")
    if not model.modes:
        raise ValueError("empty mode list")
    return FrfRecord(f, _modal_sum(2.0 * np.pi * f, model.modes), meta or {})


@dataclass(frozen=True)
class PopulationSpec:
    n_members: int
    base_model: ModalModel
    frequency_jitter: float = 0.0
    residue_jitter: float = 0.0
    damping_jitter: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_members < 1:
            raise ValueError("n_members must be >= 1")
        for name in ("frequency_jitter", "residue_jitter", "damping_jitter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def synthesize_population(spec: PopulationSpec, frequencies=None):
    """Draw ``n_members`` jittered copies of the base model and their FRFs.

    Each member parameter is the base value times ``1 + U(-spread, spread)``.
    Returns a list of ``(ModalModel, FrfRecord)`` pairs.
    """
    if frequencies is None:
        frequencies = frequency_grid()
    rng = np.random.default_rng(spec.rng_seed)
    n_modes = len(spec.base_model.modes)
    out = []
    for member in range(spec.n_members):
        u = rng.uniform(-1.0, 1.0, size=(3, n_modes))
        modes = [
            Mode(
                m.natural_frequency * (1.0 + spec.frequency_jitter * u[0, j]),
                m.damping_ratio * (1.0 + spec.damping_jitter * u[1, j]),
                m.residue * (1.0 + spec.residue_jitter * u[2, j]),
            )
            for j, m in enumerate(spec.base_model.modes)
        ]
        model = ModalModel(tuple(modes), spec.base_model.dof_pair)
        meta = {"structure_id": f"member_{member:02d}", "condition": "undamaged"}
        out.append((model, modal_frf(model, frequencies, meta)))
    return out


def population_from_models(models, frequencies=None):
    """Pair explicit member models with their FRFs (no jitter)."""
    if frequencies is None:
        frequencies = frequency_grid()
    return [
        (m, modal_frf(m, frequencies, {"structure_id": f"member_{i:02d}", "condition": "undamaged"}))
        for i, m in enumerate(models)
    ]


def replicate_with_noise(frf: FrfRecord, n_copies: int, noise_fraction: float, rng_seed: int):
    """Noisy copies of an FRF.

    Real and imaginary parts get independent Gaussian noise whose standard
    deviation is ``noise_fraction`` times that part's own absolute peak.
    """
    if len(frf) == 0:
        raise ValueError("cannot replicate an empty FRF")
    if n_copies < 1:
        raise ValueError("n_copies must be >= 1")
    if noise_fraction < 0:
        raise ValueError("noise_fraction must be >= 0")
    rng = np.random.default_rng(rng_seed)
    n = len(frf)
    sd_re = noise_fraction * np.max(np.abs(frf.real))
    sd_im = noise_fraction * np.max(np.abs(frf.imag))
    noise_re = rng.standard_normal((n_copies, n)) * sd_re
    noise_im = rng.standard_normal((n_copies, n)) * sd_im
    copies = []
    for c in range(n_copies):
        meta = dict(frf.meta, replica=c)
        copies.append(FrfRecord(frf.frequencies, frf.values + noise_re[c] + 1j * noise_im[c], meta))
    return copies


def apply_damage(model: ModalModel, reduction_fraction: float) -> ModalModel:
    """Scale every natural frequency by ``1 - reduction_fraction``."""
    if not 0.0 <= reduction_fraction < 1.0:
        raise ValueError(f"reduction_fraction must lie in [0, 1), got {reduction_fraction}")
    if reduction_fraction == 0.0:
        return model
    modes = tuple(
        replace(m, natural_frequency=m.natural_frequency * (1.0 - reduction_fraction))
        for m in model.modes
    )
    return ModalModel(modes, model.dof_pair)
