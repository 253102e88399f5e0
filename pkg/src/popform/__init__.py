"""Population forms of frequency response functions.

Modal synthesis of FRF populations, H1 estimation, GP regression with a
modal mean function, the overlapping mixture of GPs (OMGP) and
evidence-based novelty detection.
"""
__version__ = "0.1.0"

from .gp import Bounds, Hyperparameters, TrainingSet  # noqa: E402
from .modal import FrfRecord, ModalModel, Mode, PopulationSpec  # noqa: E402
from .novelty import FormPair, NoveltyVerdict, ThresholdConfig  # noqa: E402
from .omgp import OmgpModel  # noqa: E402
from .spectral import SpectralConfig, TimeSeries  # noqa: E402

__all__ = [
    "Bounds", "FormPair", "FrfRecord", "Hyperparameters", "ModalModel", "Mode", "NoveltyVerdict",
    "OmgpModel", "PopulationSpec", "SpectralConfig", "ThresholdConfig", "TimeSeries", "TrainingSet",
]
