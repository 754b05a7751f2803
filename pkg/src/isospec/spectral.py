"""Singular spectrum of an embedding matrix and its per-space statistics.

The spectrum is obtained from the symmetric eigenproblem of the ``d x d``
Gram matrix ``X^T X`` (``n`` is in the hundreds of thousands while ``d`` is a
few hundred, so a full SVD would be wasteful).  Statistics follow the usual
definitions: entropy of the normalized spectrum, effective rank
``floor(exp(H))``, condition number ``s_1 / s_d`` and the effective condition
number ``s_1 / s_erank``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .embedio import EmbeddingSpace

logger = logging.getLogger(__name__)

__all__ = [
    "SINGULAR_FLOOR",
    "SingularSpectrumError",
    "Spectrum",
    "SpectrumStats",
    "condition_number",
    "effective_condition_number",
    "effective_rank",
    "entropy",
    "eps_numerical_rank",
    "numerical_rank",
    "singular_values",
    "spectrum_stats",
]

#: Relative floor (times s_1) below which a singular value counts as zero.
SINGULAR_FLOOR = 1e-12

# Below this ratio s_d / s_1 the Gram route loses the 1e-6 relative accuracy
# on the tail (error ~ eps * (s_1 / s_i)^2); recompute with a direct SVD.
_GRAM_RELIABLE_RATIO = 1e-4


class SingularSpectrumError(ArithmeticError):
    """A singular value needed as a denominator or logarithm argument is ~0."""


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Singular values sorted in descending order."""

    sigma: np.ndarray
    source_lang: str = ""

    def __post_init__(self) -> None:
        sigma = np.array(self.sigma, dtype=np.float64, copy=True).reshape(-1)
        if sigma.size == 0:
            raise ValueError("spectrum must contain at least one singular value")
        if not np.isfinite(sigma).all():
            raise ValueError("spectrum contains non-finite values")
        if (sigma < 0).any():
            raise ValueError("singular values must be nonnegative")
        if (np.diff(sigma) > 0).any():
            raise ValueError("singular values must be sorted in descending order")
        sigma.flags.writeable = False
        object.__setattr__(self, "sigma", sigma)

    @property
    def d(self) -> int:
        return self.sigma.size

    def normalized(self) -> np.ndarray:
        total = self.sigma.sum()
        if total <= 0:
            raise SingularSpectrumError("all-zero spectrum cannot be normalized")
        return self.sigma / total

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Spectrum):
            return NotImplemented
        return self.source_lang == other.source_lang and np.array_equal(self.sigma, other.sigma)

    def __hash__(self) -> int:
        return hash((self.source_lang, self.sigma.tobytes()))

    # -- serialization: 17 significant digits round-trip float64 exactly --

    def to_dict(self) -> dict:
        return {"lang": self.source_lang, "d": self.d, "sigma": [float(s) for s in self.sigma]}

    def to_json(self) -> str:
        body = ",".join(format(float(s), ".17g") for s in self.sigma)
        return f'{{"lang": {json.dumps(self.source_lang)}, "d": {self.d}, "sigma": [{body}]}}'

    @classmethod
    def from_json(cls, text: str) -> Spectrum:
        obj = json.loads(text)
        sigma = obj["sigma"]
        if obj.get("d", len(sigma)) != len(sigma):
            raise ValueError(f"spectrum JSON declares d={obj['d']} but holds {len(sigma)} values")
        return cls(np.asarray(sigma, dtype=np.float64), obj.get("lang", ""))

    def to_csv_line(self) -> str:
        """``lang,d,s_1,...,s_d`` on one line (no trailing newline)."""
        buf = io.StringIO()
        csv.writer(buf, lineterminator="").writerow(
            [self.source_lang, self.d, *(format(float(s), ".17g") for s in self.sigma)]
        )
        return buf.getvalue()

    @classmethod
    def from_csv_line(cls, line: str) -> Spectrum:
        row = next(csv.reader([line.strip("\r\n")]))
        lang, d, values = row[0], int(row[1]), row[2:]
        if d != len(values):
            raise ValueError(f"spectrum CSV declares d={d} but holds {len(values)} values")
        return cls(np.array([float(v) for v in values]), lang)


@dataclass(frozen=True)
class SpectrumStats:
    entropy: float
    erank: int
    kappa: float
    kappa_ecn: float
    rank: int
    d: int


def singular_values(space: EmbeddingSpace | np.ndarray, method: str = "auto") -> Spectrum:
    """Singular values of the embedding matrix, largest first.

    ``method`` is ``"gram"`` (eigenvalues of ``X^T X``, then square roots),
    ``"svd"`` (LAPACK SVD of ``X``) or ``"auto"``: the Gram route, redone with
    a direct SVD when the spectrum is too ill-conditioned for the Gram route
    to be accurate on its tail.
    """
    if isinstance(space, EmbeddingSpace):
        if not space.mean_centered:
            warnings.warn(
                f"space {space.lang_id!r} is not mean-centered; its spectrum includes the mean direction",
                stacklevel=2,
            )
        x, lang = space.matrix, space.lang_id
    else:
        x, lang = np.asarray(space, dtype=np.float64), ""
    if x.ndim != 2 or x.size == 0:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("matrix contains non-finite entries")
    if method not in ("auto", "gram", "svd"):
        raise ValueError(f"unknown method {method!r}")

    d = x.shape[1]
    if method == "svd":
        sigma = _svd_route(x, d)
    else:
        sigma = _gram_route(x)
        if method == "auto" and sigma[0] > 0 and sigma[-1] < _GRAM_RELIABLE_RATIO * sigma[0]:
            logger.debug("ill-conditioned spectrum (s_d/s_1=%.3g); using direct SVD", sigma[-1] / sigma[0])
            sigma = _svd_route(x, d)
    return Spectrum(sigma, lang)


def _gram_route(x: np.ndarray) -> np.ndarray:
    gram = x.T @ x
    gram = (gram + gram.T) / 2
    eig = np.linalg.eigvalsh(gram)[::-1]
    return np.sqrt(np.clip(eig, 0.0, None))


def _svd_route(x: np.ndarray, d: int) -> np.ndarray:
    sigma = np.linalg.svd(x, compute_uv=False)
    if sigma.size < d:
        # n < d: the remaining d - n singular values are exactly zero
        sigma = np.concatenate([sigma, np.zeros(d - sigma.size)])
    return sigma


def entropy(spec: Spectrum) -> float:
    """Shannon entropy (nats) of the normalized spectrum, with 0 ln 0 = 0."""
    p = spec.normalized()
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def effective_rank(spec: Spectrum) -> int:
    """``floor(exp(H))`` clamped to ``[1, d]``."""
    erank = math.floor(math.exp(entropy(spec)))
    return int(min(max(erank, 1), spec.d))


def eps_numerical_rank(spec: Spectrum, eps: float) -> int:
    """Number of singular values ``>= eps`` (those retained by thresholding)."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return int(np.count_nonzero(spec.sigma >= eps))


def numerical_rank(spec: Spectrum) -> int:
    """Count of singular values above ``d * machine-eps * s_1``."""
    tol = spec.d * np.finfo(np.float64).eps * spec.sigma[0]
    return int(np.count_nonzero(spec.sigma > tol))


def _ratio(spec: Spectrum, index: int) -> float:
    s1 = float(spec.sigma[0])
    denom = float(spec.sigma[index])
    if s1 <= 0 or denom <= SINGULAR_FLOOR * s1:
        raise SingularSpectrumError(
            f"singular matrix{' ' + repr(spec.source_lang) if spec.source_lang else ''}: "
            f"sigma_{index + 1} = {denom:.3g} is below the floor {SINGULAR_FLOOR:g} * sigma_1"
        )
    return s1 / denom


def condition_number(spec: Spectrum) -> float:
    """``s_1 / s_d``."""
    return _ratio(spec, spec.d - 1)


def effective_condition_number(spec: Spectrum) -> float:
    """``s_1 / s_erank``: the condition number with the noisy tail dropped."""
    return _ratio(spec, effective_rank(spec) - 1)


def spectrum_stats(spec: Spectrum) -> SpectrumStats:
    """All per-space statistics at once.  Raises if the spectrum is singular."""
    return SpectrumStats(
        entropy=entropy(spec),
        erank=effective_rank(spec),
        kappa=condition_number(spec),
        kappa_ecn=effective_condition_number(spec),
        rank=numerical_rank(spec),
        d=spec.d,
    )
