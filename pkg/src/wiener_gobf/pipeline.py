"""Wiener-system simulation and the three-step identification procedure.

Step 1 estimates the best linear approximation and its poles, step 2 builds
the basis-filter bank from those poles, step 3 fits the multivariate
polynomial by linear regression.  The intermediate-signal reconstruction
used for nonlinearity shape inspection lives here as well.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Union

import numpy as np

from . import bla, gobf, polymodel
from .errors import EstimationError, InvalidSpecError, RankDeficiencyWarning
from .ratfun import PERIODIC, ZERO_INITIAL, PoleSet, RationalTF, filter_time
from .signals import NoiseSpec, SignalRecord, generate_noise

POLYNOMIAL = "polynomial"
SATURATION = "saturation"


@dataclass(frozen=True)
class StaticNonlinearity:
    """Static block: polynomial in x or a two-level saturation."""

    kind: str
    coefficients: Optional[np.ndarray] = None  # ascending powers, polynomial kind
    lower: Optional[float] = None              # saturation c1
    upper: Optional[float] = None              # saturation c2

    def __post_init__(self):
        if self.kind == POLYNOMIAL:
            if self.coefficients is None:
                raise InvalidSpecError("polynomial nonlinearity needs coefficients")
            object.__setattr__(self, "coefficients",
                               np.asarray(self.coefficients, dtype=float))
        elif self.kind == SATURATION:
            if self.lower is None or self.upper is None or not self.lower < self.upper:
                raise InvalidSpecError("saturation needs lower < upper")
        else:
            raise InvalidSpecError(f"unknown nonlinearity kind {self.kind!r}")

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == POLYNOMIAL:
            return np.polynomial.polynomial.polyval(x, self.coefficients)
        return np.clip(x, self.lower, self.upper)

    def to_json_dict(self) -> dict:
        if self.kind == POLYNOMIAL:
            return {"kind": self.kind,
                    "coefficients": [float(c) for c in self.coefficients]}
        return {"kind": self.kind, "lower": self.lower, "upper": self.upper}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "StaticNonlinearity":
        if doc["kind"] == POLYNOMIAL:
            return cls(kind=POLYNOMIAL, coefficients=np.array(doc["coefficients"]))
        return cls(kind=SATURATION, lower=doc["lower"], upper=doc["upper"])


@dataclass(frozen=True)
class WienerSystem:
    """Data generator: stable LTI block, static nonlinearity, output noise."""

    g: RationalTF
    f: StaticNonlinearity
    output_noise: Optional[NoiseSpec] = None

    def with_noise_seed(self, seed: int) -> "WienerSystem":
        if self.output_noise is None:
            return self
        return replace(self, output_noise=self.output_noise.with_seed(seed))

    def to_json_dict(self) -> dict:
        doc = {"g": self.g.to_json_dict(), "nonlinearity": self.f.to_json_dict()}
        if self.output_noise is not None:
            noise = {"variance": self.output_noise.variance,
                     "seed": self.output_noise.seed}
            if self.output_noise.shaping_filter is not None:
                noise["shaping_filter"] = self.output_noise.shaping_filter.to_json_dict()
            doc["noise"] = noise
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "WienerSystem":
        noise = None
        if "noise" in doc and doc["noise"] is not None:
            nd = doc["noise"]
            shaping = None
            if nd.get("shaping_filter"):
                shaping = RationalTF.from_json_dict(nd["shaping_filter"])
            noise = NoiseSpec(variance=float(nd["variance"]),
                              shaping_filter=shaping,
                              seed=int(nd.get("seed", 0)))
        return cls(g=RationalTF.from_json_dict(doc["g"]),
                   f=StaticNonlinearity.from_json_dict(doc["nonlinearity"]),
                   output_noise=noise)


def simulate(system: WienerSystem, u: SignalRecord,
             mode: str = PERIODIC,
             include_noise: bool = True) -> tuple[SignalRecord, SignalRecord]:
    """Return (x, y): x = G u in the chosen filtering mode, y = f(x) + v.

    The intermediate x is exposed for oracle checks only; identification
    never sees it.
    """
    x = filter_time(system.g, u, mode=mode)
    y = system.f.apply(x.samples)
    if include_noise and system.output_noise is not None \
            and system.output_noise.variance > 0:
        y = y + generate_noise(system.output_noise, len(y)).samples
    y_rec = SignalRecord(samples=y, periodic=u.periodic,
                         period_samples=u.period_samples)
    return x, y_rec


# ---------------------------------------------------------------------------
# Identification
# ---------------------------------------------------------------------------

FRF_PERIODIC = "periodic"
FRF_WELCH = "welch"


@dataclass(frozen=True)
class IdentifyConfig:
    """Orders, repetition count, polynomial degree, and data handling."""

    n_a: int
    n_b: int
    n_rep: int
    degree: int
    basis: str = polymodel.HERMITE
    filtering: str = PERIODIC
    frf_method: str = FRF_PERIODIC
    n_periods: Optional[int] = None
    welch_segment: Optional[int] = None
    max_iters: int = 100
    rel_tol: float = 1e-10

    def validate(self) -> None:
        if self.n_rep < 0:
            raise InvalidSpecError("n_rep must be >= 0")
        if self.degree < 0:
            raise InvalidSpecError("degree must be >= 0")
        if self.filtering not in (PERIODIC, ZERO_INITIAL):
            raise InvalidSpecError(f"unknown filtering mode {self.filtering!r}")
        if self.frf_method not in (FRF_PERIODIC, FRF_WELCH):
            raise InvalidSpecError(f"unknown frf method {self.frf_method!r}")
        if self.basis not in (polymodel.MONOMIAL, polymodel.HERMITE):
            raise InvalidSpecError(f"unknown basis {self.basis!r}")

    def to_json_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items()}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "IdentifyConfig":
        return cls(**{k: doc[k] for k in doc})


@dataclass
class WienerModel:
    """Identified artifact: basis bank + polynomial, with fit provenance."""

    bank: gobf.GobfBank
    poly: polymodel.MultiPolyModel
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.poly.n_channels != self.bank.n_outputs:
            raise InvalidSpecError("polynomial channel count must match the bank")

    def to_json_dict(self) -> dict:
        return {"bank": self.bank.to_json_dict(),
                "poly": self.poly.to_json_dict(),
                "provenance": self.provenance}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_json_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json_dict(cls, doc: dict) -> "WienerModel":
        return cls(bank=gobf.GobfBank.from_json_dict(doc["bank"]),
                   poly=polymodel.MultiPolyModel.from_json_dict(doc["poly"]),
                   provenance=doc.get("provenance", {}))

    @classmethod
    def from_json(cls, path) -> "WienerModel":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


def _bank_transient(bank: gobf.GobfBank, n: int) -> int:
    """Rows to drop so zero-initial bank outputs have settled (1e-8 decay,
    capped at a quarter of the record)."""
    if bank.n_dynamic == 0:
        return 0
    radius = float(np.max(np.abs(bank.base_poles)))
    if radius <= 0.0:
        return min(bank.n_dynamic, n // 4)
    t = int(np.ceil(np.log(1e-8) / np.log(radius))) + bank.n_dynamic
    return max(0, min(t, n // 4))


def estimate_bla_poles(u: SignalRecord, y: SignalRecord,
                       cfg: IdentifyConfig) -> tuple[PoleSet, bla.BlaFitResult]:
    """Steps 1a-1c: nonparametric FRF, rational fit, stabilized poles."""
    try:
        if cfg.frf_method == FRF_PERIODIC:
            frf = bla.estimate_frf(u, y, n_periods=cfg.n_periods)
        else:
            frf = bla.estimate_frf_welch(u, y, segment_length=cfg.welch_segment)
    except Exception as exc:
        raise EstimationError("frf", str(exc)) from exc
    try:
        fit = bla.fit_rational(frf, bla.BlaFitConfig(
            n_a=cfg.n_a, n_b=cfg.n_b,
            max_iters=cfg.max_iters, rel_tol=cfg.rel_tol))
    except Exception as exc:
        raise EstimationError("rational-fit", str(exc)) from exc
    return bla.stabilize_poles(fit.poles), fit


def _assemble(u: SignalRecord, y: SignalRecord, bank: gobf.GobfBank,
              cfg: IdentifyConfig, fit: Optional[bla.BlaFitResult]) -> WienerModel:
    try:
        X = gobf.bank_outputs(bank, u, mode=cfg.filtering)
    except Exception as exc:
        raise EstimationError("bank-outputs", str(exc)) from exc
    discard = _bank_transient(bank, len(u.samples)) if cfg.filtering == ZERO_INITIAL else 0
    try:
        poly = polymodel.fit_poly_model(X[discard:], y.samples[discard:],
                                        degree=cfg.degree, basis=cfg.basis)
    except Exception as exc:
        raise EstimationError("regression", str(exc)) from exc

    provenance = {
        "config": cfg.to_json_dict(),
        "transient_discarded": discard,
        "n_samples": len(u.samples),
    }
    if fit is not None:
        provenance["bla"] = {
            "poles": [[float(p.real), float(p.imag)] for p in fit.poles.poles],
            "final_cost": fit.final_cost,
            "iterations": fit.iterations,
            "converged": fit.converged,
        }
    return WienerModel(bank=bank, poly=poly, provenance=provenance)


def identify(u: SignalRecord, y: SignalRecord, cfg: IdentifyConfig) -> WienerModel:
    """Full three-step identification on one estimation record."""
    cfg.validate()
    if len(u.samples) != len(y.samples):
        raise InvalidSpecError("input and output records must have equal length")

    fit = None
    if cfg.n_rep == 0:
        bank = gobf.GobfBank(base_poles=np.array([], dtype=complex), n_rep=0)
    else:
        pole_set, fit = estimate_bla_poles(u, y, cfg)
        try:
            bank = gobf.build_bank(pole_set, cfg.n_rep)
        except Exception as exc:
            raise EstimationError("bank", str(exc)) from exc
    return _assemble(u, y, bank, cfg, fit)


def predict(model: WienerModel, u: SignalRecord,
            mode: Optional[str] = None) -> SignalRecord:
    """Simulate the identified model on a new input."""
    if mode is None:
        mode = model.provenance.get("config", {}).get("filtering", PERIODIC)
    X = gobf.bank_outputs(model.bank, u, mode=mode)
    yhat = polymodel.evaluate(model.poly, X)
    return SignalRecord(samples=yhat, periodic=u.periodic,
                        period_samples=u.period_samples)


# ---------------------------------------------------------------------------
# Intermediate-signal reconstruction and metrics
# ---------------------------------------------------------------------------

@dataclass
class IntermediateEstimate:
    """Linear-combination reconstruction of the unmeasured x(t), known only
    up to the BLA scale factor."""

    alpha_hat: np.ndarray
    x_hat: np.ndarray

    def scatter_pairs(self, y: SignalRecord) -> np.ndarray:
        return np.column_stack([self.x_hat, np.asarray(y.samples, dtype=float)])


def estimate_intermediate(bank: gobf.GobfBank, y: SignalRecord,
                          X: np.ndarray) -> IntermediateEstimate:
    """alpha_hat = argmin sum_t |y(t) - sum_l alpha_l x_l(t)|^2; x_hat = X alpha."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != bank.n_outputs:
        raise InvalidSpecError("X column count must match the bank outputs")
    target = np.asarray(y.samples, dtype=float)
    if len(target) != X.shape[0]:
        raise InvalidSpecError("y length must match X rows")
    alpha, _, rank, _ = np.linalg.lstsq(X, target, rcond=None)
    if X.shape[1] > 0 and rank < X.shape[1]:
        warnings.warn("rank-deficient intermediate estimate", RankDeficiencyWarning)
    return IntermediateEstimate(alpha_hat=alpha, x_hat=X @ alpha)


def nrmse(y: Union[SignalRecord, np.ndarray],
          yhat: Union[SignalRecord, np.ndarray], discard: int = 0) -> float:
    """||y - yhat||_2 / ||y||_2 on validation data."""
    ya = y.samples if isinstance(y, SignalRecord) else np.asarray(y, dtype=float)
    yh = yhat.samples if isinstance(yhat, SignalRecord) else np.asarray(yhat, dtype=float)
    ya, yh = ya[discard:], yh[discard:]
    denom = np.linalg.norm(ya)
    if denom == 0.0:
        return float(np.linalg.norm(yh) > 0)
    return float(np.linalg.norm(ya - yh) / denom)


def sup_error(y, yhat, discard: int = 0) -> float:
    ya = y.samples if isinstance(y, SignalRecord) else np.asarray(y, dtype=float)
    yh = yhat.samples if isinstance(yhat, SignalRecord) else np.asarray(yhat, dtype=float)
    return float(np.max(np.abs(ya[discard:] - yh[discard:])))


def select_n_rep(u_est: SignalRecord, y_est: SignalRecord,
                 u_val: SignalRecord, y_val: SignalRecord,
                 cfg: IdentifyConfig, n_rep_candidates) -> tuple[int, dict]:
    """Fit one model per candidate repetition count and pick the validation
    NRMSE minimizer; once the error starts rising, variance outweighs the
    shrinking model error and fewer repetitions win."""
    scores = {}
    for n_rep in n_rep_candidates:
        model = identify(u_est, y_est, replace(cfg, n_rep=n_rep))
        yhat = predict(model, u_val)
        discard = _bank_transient(model.bank, len(u_val.samples)) \
            if cfg.filtering == ZERO_INITIAL else 0
        scores[n_rep] = nrmse(y_val, yhat, discard=discard)
    best = min(scores, key=scores.get)
    return best, scores
