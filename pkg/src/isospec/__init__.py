"""Spectral isomorphism measures between word-embedding spaces.

Per-space statistics (entropy, effective rank, condition numbers) come from
the singular spectrum; pairwise measures compare two spectra (SVG, COND-HM,
ECOND-HM).  IS and GH are provided as baselines, and :mod:`isospec.analysis`
correlates any of them with cross-lingual task performance.
"""

__version__ = "0.1.0"

from .embedio import EmbeddingSpace, length_normalize, load_embeddings, mean_center, preprocess
from .spectral import (
    Spectrum,
    condition_number,
    effective_condition_number,
    effective_rank,
    entropy,
    eps_numerical_rank,
    singular_values,
    spectrum_stats,
)
from .measures import Measure, PairScore, cond_hm, econd_hm, harmonic_mean, pairwise_matrix, svg
from .baselines import gromov_hausdorff, isospectrality

__all__ = [
    "EmbeddingSpace",
    "Measure",
    "PairScore",
    "Spectrum",
    "cond_hm",
    "condition_number",
    "econd_hm",
    "effective_condition_number",
    "effective_rank",
    "entropy",
    "eps_numerical_rank",
    "gromov_hausdorff",
    "harmonic_mean",
    "isospectrality",
    "length_normalize",
    "load_embeddings",
    "mean_center",
    "pairwise_matrix",
    "preprocess",
    "singular_values",
    "spectrum_stats",
    "svg",
]
