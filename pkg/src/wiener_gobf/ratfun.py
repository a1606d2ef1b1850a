"""Discrete-time rational transfer functions in powers of z^-1.

Evaluation on the unit circle, periodic and zero-initial time-domain
filtering, and root computation with exact conjugate closure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.signal import lfilter

from .errors import InvalidSpecError, SingularityError, UnstableFilterError
from .signals import SignalRecord, dft, idft

PERIODIC = "periodic-steady-state"
ZERO_INITIAL = "zero-initial"

_CONJ_TOL = 1e-8


@dataclass(frozen=True)
class RationalTF:
    """B(z)/A(z) with b and a the coefficients of z^-l, a[0] != 0."""

    b: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(a))):
            raise InvalidSpecError("transfer-function coefficients must be finite")
        if a[0] == 0.0:
            raise InvalidSpecError("leading denominator coefficient must be nonzero")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "a", a)

    @property
    def n_b(self) -> int:
        return len(self.b) - 1

    @property
    def n_a(self) -> int:
        return len(self.a) - 1

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(poles(self).poles) < 1.0))

    def to_json_dict(self) -> dict:
        return {"b": [float(v) for v in self.b], "a": [float(v) for v in self.a]}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, doc: dict) -> "RationalTF":
        return cls(b=np.array(doc["b"], dtype=float),
                   a=np.array(doc["a"], dtype=float))

    @classmethod
    def identity(cls) -> "RationalTF":
        return cls(b=np.array([1.0]), a=np.array([1.0]))


@dataclass(frozen=True)
class PoleSet:
    """Pole locations, closed under conjugation for real-coefficient sources."""

    poles: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "poles",
                           np.atleast_1d(np.asarray(self.poles, dtype=complex)))

    def __len__(self) -> int:
        return len(self.poles)

    @property
    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles) < 1.0))

    def is_conjugate_closed(self, tol: float = _CONJ_TOL) -> bool:
        remaining = list(self.poles)
        while remaining:
            p = remaining.pop()
            if abs(p.imag) <= tol * (1.0 + abs(p)):
                continue
            match = min(range(len(remaining)),
                        key=lambda i: abs(remaining[i] - np.conj(p)),
                        default=None)
            if match is None or abs(remaining[match] - np.conj(p)) > tol * (1.0 + abs(p)):
                return False
            remaining.pop(match)
        return True


def freq_response(tf: RationalTF, omegas) -> np.ndarray:
    """Evaluate B(e^{j w}) / A(e^{j w}) on a grid of angular frequencies."""
    w = np.exp(-1j * np.atleast_1d(np.asarray(omegas, dtype=float)))
    num = np.polynomial.polynomial.polyval(w, tf.b)
    den = np.polynomial.polynomial.polyval(w, tf.a)
    if np.any(np.abs(den) < 1e-300):
        raise SingularityError("denominator vanishes on the evaluation grid")
    return num / den


def _symmetrize_conjugates(roots: np.ndarray, tol: float = _CONJ_TOL) -> np.ndarray:
    """Snap nearly-conjugate root pairs onto exact closure.

    Real-coefficient polynomials have conjugate-closed roots up to rounding;
    downstream basis construction requires the closure to be exact.
    """
    roots = np.asarray(roots, dtype=complex)
    out = []
    used = np.zeros(len(roots), dtype=bool)
    order = np.argsort(-np.abs(roots.imag))
    for i in order:
        if used[i]:
            continue
        r = roots[i]
        used[i] = True
        if abs(r.imag) <= tol * (1.0 + abs(r)):
            out.append(complex(r.real))
            continue
        candidates = [j for j in range(len(roots)) if not used[j]]
        if not candidates:
            out.append(r)
            continue
        j = min(candidates, key=lambda j: abs(roots[j] - np.conj(r)))
        if abs(roots[j] - np.conj(r)) <= 1e-3 * (1.0 + abs(r)):
            used[j] = True
            p = 0.5 * (r + np.conj(roots[j]))
            out.extend([p, np.conj(p)])
        else:
            out.append(r)
    return np.array(out, dtype=complex)


def poles(tf: RationalTF) -> PoleSet:
    """Denominator roots in z, conjugate pairs symmetrized exactly."""
    if len(tf.a) < 2:
        return PoleSet(poles=np.array([], dtype=complex))
    return PoleSet(poles=_symmetrize_conjugates(np.roots(tf.a)))


def zeros(tf: RationalTF) -> PoleSet:
    """Numerator roots in z (same conventions as poles)."""
    b = np.trim_zeros(tf.b, "f")
    if len(b) < 2:
        return PoleSet(poles=np.array([], dtype=complex))
    return PoleSet(poles=_symmetrize_conjugates(np.roots(b)))


def transient_length(tf: RationalTF, n_max: int, tol: float = 1e-8) -> int:
    """Samples after which the impulse response stays below tol * peak.

    Capped at n_max // 4; used to discard start-up transients when filtering
    non-periodic data from zero initial conditions.
    """
    cap = max(1, n_max // 4)
    impulse = np.zeros(cap)
    impulse[0] = 1.0
    h = lfilter(tf.b, tf.a, impulse)
    mags = np.abs(h)
    peak = mags.max()
    if peak == 0.0:
        return 0
    keep = np.nonzero(mags >= tol * peak)[0]
    if len(keep) == 0:
        return 0
    t = int(keep[-1]) + 1
    return min(t, cap)


def filter_time(tf: RationalTF, u: SignalRecord, mode: str = PERIODIC) -> SignalRecord:
    """Apply the filter to a signal record.

    Periodic mode computes Y(k) = H(w_k) U(k) on the record's own DFT grid
    (exact steady state, requires a stable filter and a periodic input).
    Zero-initial mode runs the direct-form recursion from rest.
    """
    if mode == PERIODIC:
        if not u.periodic:
            raise InvalidSpecError("periodic-steady-state filtering needs a periodic input")
        if not tf.is_stable():
            raise UnstableFilterError("periodic-steady-state filtering needs a stable filter")
        n = len(u.samples)
        om = 2.0 * np.pi * np.arange(n) / n
        spec = freq_response(tf, om) * dft(u.samples)
        y = idft(spec).real
        return SignalRecord(samples=y, periodic=True, period_samples=u.period_samples,
                            spectrum=spec)
    if mode == ZERO_INITIAL:
        y = lfilter(tf.b, tf.a, u.samples)
        return SignalRecord(samples=np.asarray(y, dtype=float))
    raise InvalidSpecError(f"unknown filtering mode {mode!r}")


def cascade(tfs: Iterable[RationalTF]) -> RationalTF:
    """Product of transfer functions by polynomial convolution."""
    b = np.array([1.0])
    a = np.array([1.0])
    for tf in tfs:
        b = np.convolve(b, tf.b)
        a = np.convolve(a, tf.a)
    return RationalTF(b=b, a=a)
