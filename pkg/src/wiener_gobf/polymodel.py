"""Multivariate polynomial model of the static nonlinearity.

Total-degree-Q polynomials over the basis-filter channels, fitted by linear
least squares.  The monomial basis is the reference semantics; the Hermite
basis (probabilists' polynomials on standardized channels) spans the same
space with far better conditioning and is the default for estimation.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from .errors import InvalidSpecError, RankDeficiencyWarning

MultiIndex = Tuple[int, ...]

MONOMIAL = "monomial"
HERMITE = "hermite"


def enumerate_multi_indices(n_channels: int, degree: int) -> list[MultiIndex]:
    """All exponent tuples with total degree <= Q in graded order, constant
    first; within a degree the leading channels carry the higher exponents
    first ((2,0), (1,1), (0,2), ...)."""
    if degree < 0:
        raise InvalidSpecError("degree must be >= 0")
    if n_channels < 1:
        raise InvalidSpecError("n_channels must be >= 1")
    indices: list[MultiIndex] = [tuple([0] * n_channels)]
    for p in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(n_channels), p):
            expo = [0] * n_channels
            for ch in combo:
                expo[ch] += 1
            indices.append(tuple(expo))
    return indices


def n_coefficients(n_channels: int, degree: int) -> int:
    return math.comb(n_channels + degree, degree)


@dataclass(frozen=True)
class ChannelStandardization:
    """Per-channel shift and scale frozen at fit time (hermite mode)."""

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=float))

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale

    @classmethod
    def from_data(cls, X: np.ndarray) -> "ChannelStandardization":
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        degenerate = scale <= 0
        if np.any(degenerate):
            warnings.warn("zero-variance channel; using unit scale",
                          RankDeficiencyWarning)
            scale = np.where(degenerate, 1.0, scale)
        return cls(mean=mean, scale=scale)

    @classmethod
    def identity(cls, n_channels: int) -> "ChannelStandardization":
        return cls(mean=np.zeros(n_channels), scale=np.ones(n_channels))


def _hermite_table(x: np.ndarray, degree: int) -> list[np.ndarray]:
    """He_0..He_Q columnwise via the probabilists' recurrence."""
    table = [np.ones_like(x), x.copy()]
    for k in range(2, degree + 1):
        table.append(x * table[-1] - (k - 1) * table[-2])
    return table[: degree + 1]


def _channel_power_table(X: np.ndarray, degree: int, basis: str,
                         std: Optional[ChannelStandardization]) -> list[np.ndarray]:
    if basis == HERMITE:
        Xs = std.apply(X)
        return _hermite_table(Xs, degree)
    table = [np.ones_like(X), X.astype(float)]
    for _ in range(2, degree + 1):
        table.append(X * table[-1])
    return table[: degree + 1]


@dataclass
class RegressionProblem:
    """Regressor matrix and (optionally attached) target vector."""

    psi: np.ndarray
    indices: list[MultiIndex]
    basis: str
    standardization: Optional[ChannelStandardization] = None
    y: Optional[np.ndarray] = None

    def with_target(self, y) -> "RegressionProblem":
        y = np.asarray(y, dtype=float)
        if len(y) != self.psi.shape[0]:
            raise InvalidSpecError("target length must match the regressor rows")
        return RegressionProblem(self.psi, self.indices, self.basis,
                                 self.standardization, y)


def build_regressors(X: np.ndarray, degree: int, basis: str = MONOMIAL,
                     standardization: Optional[ChannelStandardization] = None,
                     y=None) -> RegressionProblem:
    """Columns are products over channels of per-channel basis polynomials,
    one column per multi-index."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if basis not in (MONOMIAL, HERMITE):
        raise InvalidSpecError(f"unknown basis {basis!r}")
    n, n_ch = X.shape
    if basis == HERMITE and standardization is None:
        standardization = ChannelStandardization.from_data(X)
    table = _channel_power_table(X, degree, basis, standardization)
    indices = enumerate_multi_indices(n_ch, degree)
    psi = np.empty((n, len(indices)))
    for j, expo in enumerate(indices):
        col = np.ones(n)
        for ch, e in enumerate(expo):
            if e:
                col = col * table[e][:, ch]
        psi[:, j] = col
    prob = RegressionProblem(psi=psi, indices=indices, basis=basis,
                             standardization=standardization)
    return prob.with_target(y) if y is not None else prob


def fit_ls(prob: RegressionProblem) -> np.ndarray:
    """Least-squares coefficients via orthogonal factorization.

    Rank deficiency yields the minimum-norm solution and a warning; the
    overparameterized regime is expected for rich banks on short records.
    """
    if prob.y is None:
        raise InvalidSpecError("regression problem has no target attached")
    if not np.all(np.isfinite(prob.psi)) or not np.all(np.isfinite(prob.y)):
        raise InvalidSpecError("regression data must be finite")
    beta, _, rank, _ = scipy.linalg.lstsq(prob.psi, prob.y,
                                          lapack_driver="gelsd")
    if rank < prob.psi.shape[1]:
        warnings.warn(
            f"rank-deficient regression ({rank}/{prob.psi.shape[1]}); "
            "minimum-norm solution returned", RankDeficiencyWarning)
    return beta


@dataclass
class MultiPolyModel:
    """g(x_0..x_n): multi-index -> coefficient map with its basis convention."""

    n_channels: int
    degree: int
    basis: str
    coefficients: np.ndarray
    standardization: Optional[ChannelStandardization] = None
    indices: list = field(default_factory=list)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if not self.indices:
            self.indices = enumerate_multi_indices(self.n_channels, self.degree)
        expected = len(self.indices)
        if len(self.coefficients) != expected:
            raise InvalidSpecError(
                f"expected {expected} coefficients, got {len(self.coefficients)}")
        if not np.all(np.isfinite(self.coefficients)):
            raise InvalidSpecError("coefficients must be finite")

    def to_json_dict(self) -> dict:
        doc = {
            "n_channels": self.n_channels,
            "degree": self.degree,
            "basis": self.basis,
            "terms": [{"exponents": list(idx), "coefficient": float(c)}
                      for idx, c in zip(self.indices, self.coefficients)],
        }
        if self.standardization is not None:
            doc["standardization"] = {
                "mean": [float(v) for v in self.standardization.mean],
                "scale": [float(v) for v in self.standardization.scale],
            }
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, doc: dict) -> "MultiPolyModel":
        std = None
        if "standardization" in doc:
            std = ChannelStandardization(
                mean=np.array(doc["standardization"]["mean"]),
                scale=np.array(doc["standardization"]["scale"]))
        return cls(
            n_channels=int(doc["n_channels"]),
            degree=int(doc["degree"]),
            basis=doc["basis"],
            coefficients=np.array([t["coefficient"] for t in doc["terms"]]),
            standardization=std,
            indices=[tuple(t["exponents"]) for t in doc["terms"]],
        )


def fit_poly_model(X: np.ndarray, y, degree: int,
                   basis: str = HERMITE) -> MultiPolyModel:
    """Build regressors, solve, and assemble the model in one step."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    prob = build_regressors(X, degree, basis=basis, y=y)
    beta = fit_ls(prob)
    return MultiPolyModel(
        n_channels=X.shape[1],
        degree=degree,
        basis=basis,
        coefficients=beta,
        standardization=prob.standardization,
        indices=prob.indices,
    )


def evaluate(model: MultiPolyModel, X: np.ndarray) -> np.ndarray:
    """y_hat(t) = sum over indices of beta_idx * basis_idx(X(t, .)).

    Streams over columns so large records never materialize the full
    regressor matrix.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.n_channels:
        raise InvalidSpecError(
            f"model expects {model.n_channels} channels, got {X.shape[1]}")
    std = model.standardization
    if model.basis == HERMITE and std is None:
        std = ChannelStandardization.identity(model.n_channels)
    table = _channel_power_table(X, model.degree, model.basis, std)
    out = np.zeros(X.shape[0])
    for expo, coef in zip(model.indices, model.coefficients):
        if coef == 0.0:
            continue
        col = np.full(X.shape[0], coef)
        for ch, e in enumerate(expo):
            if e:
                col = col * table[e][:, ch]
        out += col
    return out
