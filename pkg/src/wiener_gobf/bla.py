"""Best-linear-approximation estimation.

Nonparametric FRF from periodic (or random) input/output data, then a
weighted least-squares rational fit under the unit-norm parameter
constraint, yielding the pole estimates that seed the basis construction.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.signal import get_window

from .errors import (
    DegenerateExcitationError,
    InvalidSpecError,
    PoleStabilizationWarning,
    RankDeficiencyError,
    RepeatedPoleWarning,
)
from .ratfun import PoleSet, RationalTF, poles as tf_poles
from .signals import SignalRecord

_EXCITED_DETECT_REL = 1e-9
_EXCITED_MIN_REL = 1e-12


@dataclass
class NonparametricBla:
    """FRF samples on the excited bins of one period.

    ``excited_bins`` indexes the DFT grid of length ``n_fft`` (one period);
    ``frf`` and ``weight`` are aligned with it.
    """

    excited_bins: np.ndarray
    frf: np.ndarray
    weight: np.ndarray
    n_fft: int

    def __post_init__(self):
        self.excited_bins = np.asarray(self.excited_bins, dtype=int)
        self.frf = np.asarray(self.frf, dtype=complex)
        self.weight = np.asarray(self.weight, dtype=float)
        if len(self.frf) != len(self.excited_bins) or len(self.weight) != len(self.frf):
            raise InvalidSpecError("excited_bins, frf, and weight must align")
        if np.any(self.weight <= 0):
            raise InvalidSpecError("weights must be strictly positive")

    @property
    def omegas(self) -> np.ndarray:
        return 2.0 * np.pi * self.excited_bins / self.n_fft

    def scaled(self, c: complex) -> "NonparametricBla":
        return NonparametricBla(self.excited_bins, c * self.frf,
                                self.weight.copy(), self.n_fft)


@dataclass(frozen=True)
class BlaFitConfig:
    """Orders and stopping rules for the rational fit (n_a = n_p under the
    known-order assumption)."""

    n_a: int
    n_b: int
    max_iters: int = 100
    rel_tol: float = 1e-10
    weighting: Union[str, Sequence[float]] = "uniform"
    n_sk_iters: int = 20

    def validate(self) -> None:
        if self.n_a < 0 or self.n_b < 0:
            raise InvalidSpecError("orders must be non-negative")
        if self.rel_tol <= 0:
            raise InvalidSpecError("rel_tol must be positive")
        if self.max_iters < 1:
            raise InvalidSpecError("max_iters must be >= 1")


@dataclass
class BlaFitResult:
    """Fitted parametric BLA with the stacked coefficient vector normalized
    to unit 2-norm."""

    tf: RationalTF
    poles: PoleSet
    final_cost: float
    iterations: int
    converged: bool
    cost_trace: list = field(default_factory=list)

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.tf.a, self.tf.b])

    def to_json_dict(self) -> dict:
        return {
            "tf": self.tf.to_json_dict(),
            "poles": [[float(p.real), float(p.imag)] for p in self.poles.poles],
            "final_cost": self.final_cost,
            "iterations": self.iterations,
            "converged": self.converged,
            "cost_trace": [float(c) for c in self.cost_trace],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())


# ---------------------------------------------------------------------------
# Nonparametric estimates
# ---------------------------------------------------------------------------

def estimate_frf(u: SignalRecord, y: SignalRecord,
                 n_periods: Optional[int] = None,
                 excited_bins: Optional[np.ndarray] = None) -> NonparametricBla:
    """FRF as the ratio of period-averaged output and input DFTs.

    The input must be periodic with a known period.  Excited bins are
    detected from the averaged input spectrum unless given explicitly; bins
    with essentially zero input power raise ``DegenerateExcitationError``.
    """
    if not u.periodic or u.period_samples is None:
        raise InvalidSpecError("estimate_frf requires a periodic input record")
    p = int(u.period_samples)
    if len(y.samples) != len(u.samples):
        raise InvalidSpecError("input and output records must have equal length")
    total = len(u.samples)
    if n_periods is None:
        n_periods = total // p
    if n_periods < 1 or n_periods * p > total:
        raise InvalidSpecError("record does not contain n_periods full periods")

    u_blocks = u.samples[: n_periods * p].reshape(n_periods, p)
    y_blocks = y.samples[: n_periods * p].reshape(n_periods, p)
    u_spec = np.mean(np.fft.fft(u_blocks, axis=1), axis=0)
    y_spec = np.mean(np.fft.fft(y_blocks, axis=1), axis=0)

    peak = float(np.max(np.abs(u_spec)))
    if peak == 0.0:
        raise DegenerateExcitationError("input record has no power")

    if excited_bins is None:
        half = np.arange(1, p // 2 + 1)
        mask = np.abs(u_spec[half]) > _EXCITED_DETECT_REL * peak
        bins = half[mask]
        if len(bins) == 0:
            raise DegenerateExcitationError("no excited bins detected")
    else:
        bins = np.asarray(excited_bins, dtype=int)
        low = np.abs(u_spec[bins]) < _EXCITED_MIN_REL * peak
        if np.any(low):
            raise DegenerateExcitationError(
                f"excited bins {bins[low].tolist()} carry no input power"
            )

    frf = y_spec[bins] / u_spec[bins]
    return NonparametricBla(excited_bins=bins, frf=frf,
                            weight=np.ones(len(bins)), n_fft=p)


def estimate_frf_welch(u: SignalRecord, y: SignalRecord,
                       segment_length: Optional[int] = None,
                       overlap: float = 0.5,
                       window: str = "hann") -> NonparametricBla:
    """Classical cross-power over auto-power FRF for random excitations.

    Windowed, overlapped segment averaging; stands in for the more advanced
    FRF estimators when the input is not periodic.
    """
    x = np.asarray(u.samples, dtype=float)
    z = np.asarray(y.samples, dtype=float)
    if len(x) != len(z):
        raise InvalidSpecError("input and output records must have equal length")
    n = len(x)
    if segment_length is None:
        segment_length = max(32, n // 4)
    seg = int(segment_length)
    if seg > n:
        raise InvalidSpecError("segment_length exceeds record length")
    step = max(1, int(seg * (1.0 - overlap)))
    win = get_window(window, seg)

    suu = np.zeros(seg)
    syu = np.zeros(seg, dtype=complex)
    count = 0
    for start in range(0, n - seg + 1, step):
        xu = np.fft.fft(win * x[start:start + seg])
        xy = np.fft.fft(win * z[start:start + seg])
        suu += np.abs(xu) ** 2
        syu += xy * np.conj(xu)
        count += 1
    if count == 0:
        raise InvalidSpecError("no full segments available")

    bins = np.arange(1, seg // 2 + 1)
    floor = _EXCITED_MIN_REL * float(np.max(suu))
    keep = suu[bins] > floor
    bins = bins[keep]
    frf = syu[bins] / suu[bins]
    return NonparametricBla(excited_bins=bins, frf=frf,
                            weight=np.ones(len(bins)), n_fft=seg)


# ---------------------------------------------------------------------------
# Parametric fit
# ---------------------------------------------------------------------------

def _resolve_weights(frf: NonparametricBla, cfg: BlaFitConfig) -> np.ndarray:
    if isinstance(cfg.weighting, str):
        if cfg.weighting != "uniform":
            raise InvalidSpecError(f"unknown weighting {cfg.weighting!r}")
        return frf.weight.copy()
    w = np.asarray(cfg.weighting, dtype=float)
    if len(w) != len(frf.frf) or np.any(w <= 0):
        raise InvalidSpecError("user weights must be positive and align with the FRF")
    return w


def _unit_norm(theta: np.ndarray) -> np.ndarray:
    theta = theta / np.linalg.norm(theta)
    pivot = np.argmax(np.abs(theta))
    if theta[pivot] < 0:
        theta = -theta
    return theta


def fit_rational(frf: NonparametricBla, cfg: BlaFitConfig) -> BlaFitResult:
    """Minimize mean W(k) |G_hat(k) - B/A(k)|^2 subject to ||theta||_2 = 1.

    Linearized total least squares seeds the iteration, Sanathanan-Koerner
    reweighting walks it toward the true cost, and a damped Gauss-Newton
    refinement finishes on the exact objective.  The FRF is normalized by its
    median magnitude internally (pole locations are scale free) and the scale
    is restored in the returned numerator.
    """
    cfg.validate()
    n_bins = len(frf.frf)
    if n_bins < (cfg.n_a + cfg.n_b + 2) / 2:
        raise InvalidSpecError(
            f"{n_bins} excited bins cannot determine {cfg.n_a + cfg.n_b + 2} parameters"
        )

    w_user = _resolve_weights(frf, cfg)
    om = frf.omegas
    scale = float(np.median(np.abs(frf.frf)))
    if scale == 0.0:
        scale = 1.0
    g = frf.frf / scale

    na, nb = cfg.n_a, cfg.n_b
    ea = np.exp(-1j * np.outer(om, np.arange(na + 1)))
    eb = np.exp(-1j * np.outer(om, np.arange(nb + 1)))
    sqw = np.sqrt(w_user)

    def split(theta):
        return theta[: na + 1], theta[na + 1:]

    def cost(theta):
        a, b = split(theta)
        den = ea @ a
        if np.any(np.abs(den) < 1e-300):
            return np.inf
        return float(np.mean(w_user * np.abs(g - (eb @ b) / den) ** 2))

    def linearized(den_weight):
        m = np.hstack([
            (sqw * den_weight * g)[:, None] * ea,
            -(sqw * den_weight)[:, None] * eb,
        ])
        mr = np.vstack([m.real, m.imag])
        _, sv, vt = np.linalg.svd(mr, full_matrices=False)
        if len(sv) >= 2 and sv[-2] <= 1e-12 * sv[0]:
            raise RankDeficiencyError(
                "linearized normal system is singular; reduce n_a/n_b"
            )
        return _unit_norm(vt[-1])

    trace = []
    theta = linearized(np.ones(n_bins))
    best_theta, best_cost = theta, cost(theta)
    trace.append(best_cost)

    for _ in range(cfg.n_sk_iters):
        a, _ = split(theta)
        den = np.abs(ea @ a)
        theta = linearized(1.0 / np.maximum(den, 1e-12))
        c = cost(theta)
        trace.append(c)
        if c < best_cost:
            best_cost, best_theta = c, theta

    theta, current = best_theta, best_cost
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iters + 1):
        a, b = split(theta)
        den = ea @ a
        num = eb @ b
        resid = sqw * (g - num / den)
        jac = np.hstack([
            (sqw * num / den**2)[:, None] * ea,
            -(sqw / den)[:, None] * eb,
        ])
        jr = np.vstack([jac.real, jac.imag])
        rr = np.concatenate([resid.real, resid.imag])
        step, *_ = np.linalg.lstsq(jr, rr, rcond=None)

        previous = current
        improved = False
        lam = 1.0
        for _ in range(30):
            cand = _unit_norm(theta - lam * step)
            c = cost(cand)
            if c < current * (1.0 - 1e-15):
                theta, current = cand, c
                improved = True
                break
            lam *= 0.5
        if not improved:
            converged = True
            break
        trace.append(current)
        if previous - current <= cfg.rel_tol * max(current, 1e-300):
            converged = True
            break

    a, b = split(theta)
    theta_out = _unit_norm(np.concatenate([a, b * scale]))
    tf = RationalTF(b=theta_out[na + 1:], a=theta_out[: na + 1])
    pole_set = tf_poles(tf)

    ps = pole_set.poles
    if len(ps) >= 2:
        dists = [abs(ps[i] - ps[j]) for i in range(len(ps)) for j in range(i + 1, len(ps))]
        if min(dists) < 1e-6:
            warnings.warn("estimated poles are nearly repeated; the N_F^-1/2 "
                          "pole-error rate assumes distinct poles",
                          RepeatedPoleWarning)

    return BlaFitResult(
        tf=tf,
        poles=pole_set,
        final_cost=cost(theta) * scale**2,
        iterations=iterations,
        converged=converged,
        cost_trace=[c * scale**2 for c in trace],
    )


def stabilize_poles(ps: PoleSet) -> PoleSet:
    """Reflect any pole with |p| >= 1 to 1/conj(p); warns when it acts."""
    p = np.asarray(ps.poles, dtype=complex).copy()
    bad = np.abs(p) >= 1.0
    if np.any(bad):
        p[bad] = 1.0 / np.conj(p[bad])
        warnings.warn(f"reflected {int(bad.sum())} unstable pole estimate(s) "
                      "into the unit circle", PoleStabilizationWarning)
    return PoleSet(poles=p)
