"""Generalized orthonormal basis functions.

A finite pole set {xi_1..xi_nxi}, repeated n_rep times, generates the cascade

    F_l(z) = sqrt(1 - |xi_l|^2) / (z - xi_l) * prod_{i<l} (1 - conj(xi_i) z) / (z - xi_i)

plus the constant function F_0(z) = 1 for the feed-through term.  The
complex functions are orthonormal on the unit circle; for real-valued model
channels, each conjugate pole pair contributes sqrt(2)*Re and sqrt(2)*Im of
one member, whitened by the analytic 2x2 in-pair Gram so the real columns
are orthonormal as well.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Union

import numpy as np
from scipy.signal import lfilter

from .errors import IllConditionedBasisWarning, InvalidSpecError, UnstableFilterError
from .ratfun import PERIODIC, ZERO_INITIAL, PoleSet, RationalTF, freq_response
from .ratfun import poles as tf_poles
from .signals import SignalRecord, dft

_REAL_POLE_TOL = 1e-12
_PROJECTION_GRID = 4096
_CONDITION_WARN = 1e10


def _canonical_pole_order(poles: np.ndarray) -> np.ndarray:
    """Sort poles by (modulus, |angle|) with conjugate pairs adjacent.

    The positive-imaginary member of each pair comes first.  Basis span is
    invariant to this choice; individual expansion coefficients are not.
    """
    items = []
    remaining = list(np.asarray(poles, dtype=complex))
    while remaining:
        p = remaining.pop(0)
        if abs(p.imag) <= _REAL_POLE_TOL * (1.0 + abs(p)):
            items.append((abs(p), 0.0, [complex(p.real)]))
            continue
        j = min(range(len(remaining)), key=lambda i: abs(remaining[i] - np.conj(p)))
        if abs(remaining[j] - np.conj(p)) > 1e-8 * (1.0 + abs(p)):
            raise InvalidSpecError("pole set is not conjugate closed")
        remaining.pop(j)
        rep = p if p.imag > 0 else np.conj(p)
        items.append((abs(rep), abs(np.angle(rep)), [rep, np.conj(rep)]))
    items.sort(key=lambda t: (t[0], t[1]))
    ordered = [p for _, _, group in items for p in group]
    return np.array(ordered, dtype=complex)


def pair_whitening(xi: complex) -> np.ndarray:
    """2x2 transform making [sqrt(2) Re F, sqrt(2) Im F] orthonormal.

    For a conjugate pair preceded by a conjugate-closed (hence real) all-pass
    product, the only nonzero cross moment is <F, conj-F> which evaluates by
    residues to g = (1 - |xi|^2) / (1 - xi^2), independent of the preceding
    sections.  The raw pair Gram is [[1+Re g, Im g], [Im g, 1-Re g]]; its
    inverse Cholesky factor restores exact orthonormality.
    """
    g = (1.0 - abs(xi) ** 2) / (1.0 - xi**2)
    gram = np.array([[1.0 + g.real, g.imag], [g.imag, 1.0 - g.real]])
    return np.linalg.inv(np.linalg.cholesky(gram)).T


@dataclass(frozen=True)
class GobfBank:
    """Ordered basis {F_0 = 1, F_1, ..., F_n} from a repeated finite pole set."""

    base_poles: np.ndarray
    n_rep: int
    include_constant: bool = True

    def __post_init__(self):
        base = np.atleast_1d(np.asarray(self.base_poles, dtype=complex))
        if self.n_rep < 0:
            raise InvalidSpecError("n_rep must be >= 0")
        if self.n_rep > 0:
            if np.any(np.abs(base) >= 1.0):
                raise UnstableFilterError(
                    "bank poles must lie strictly inside the unit circle; "
                    "run stabilize_poles first"
                )
            base = _canonical_pole_order(base)
        object.__setattr__(self, "base_poles", base)

    @property
    def n_base(self) -> int:
        return len(self.base_poles)

    @property
    def n_dynamic(self) -> int:
        return self.n_rep * self.n_base

    @property
    def n_outputs(self) -> int:
        return self.n_dynamic + (1 if self.include_constant else 0)

    @property
    def pole_sequence(self) -> np.ndarray:
        """xi_1..xi_n with the periodic repetition pattern."""
        if self.n_rep == 0:
            return np.array([], dtype=complex)
        return np.tile(self.base_poles, self.n_rep)

    @cached_property
    def realization(self) -> list:
        """Cascade descriptor per dynamic function: its pole and the all-pass
        poles preceding it."""
        seq = self.pole_sequence
        return [{"pole": seq[l], "allpass_poles": seq[:l].copy()}
                for l in range(len(seq))]

    def sub_bank(self, n_rep: int) -> "GobfBank":
        if n_rep > self.n_rep:
            raise InvalidSpecError("sub_bank cannot extend the repetition count")
        return GobfBank(base_poles=self.base_poles, n_rep=n_rep,
                        include_constant=self.include_constant)

    def to_json_dict(self) -> dict:
        return {
            "base_poles": [[float(p.real), float(p.imag)] for p in self.base_poles],
            "n_rep": self.n_rep,
            "include_constant": self.include_constant,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, doc: dict) -> "GobfBank":
        base = np.array([complex(re, im) for re, im in doc["base_poles"]])
        return cls(base_poles=base, n_rep=int(doc["n_rep"]),
                   include_constant=bool(doc.get("include_constant", True)))


def build_bank(poles: Union[PoleSet, np.ndarray], n_rep: int,
               include_constant: bool = True) -> GobfBank:
    """Construct the bank from a stable, conjugate-closed pole set."""
    p = poles.poles if isinstance(poles, PoleSet) else np.asarray(poles, dtype=complex)
    return GobfBank(base_poles=p, n_rep=n_rep, include_constant=include_constant)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _complex_columns(bank: GobfBank, z: np.ndarray) -> np.ndarray:
    """F_1..F_n evaluated at arbitrary complex points (cascade form)."""
    z = np.asarray(z, dtype=complex)
    seq = bank.pole_sequence
    cols = np.empty((len(z), len(seq)), dtype=complex)
    running = np.ones_like(z)
    for l, xi in enumerate(seq):
        cols[:, l] = np.sqrt(1.0 - abs(xi) ** 2) / (z - xi) * running
        running = running * (1.0 - np.conj(xi) * z) / (z - xi)
    return cols


def _recombine_real(bank: GobfBank, raw: np.ndarray, raw_conj: np.ndarray) -> np.ndarray:
    """Map complex basis columns to real-coefficient columns.

    ``raw_conj`` must hold conj(F_l(conj(.))) on the same grid, which equals
    the conjugate-coefficient function evaluated at the grid.  Real poles pass
    through; conjugate pairs are replaced by the whitened Re/Im combination.
    """
    seq = bank.pole_sequence
    out = np.empty_like(raw)
    l = 0
    while l < len(seq):
        xi = seq[l]
        if abs(xi.imag) <= _REAL_POLE_TOL * (1.0 + abs(xi)):
            out[:, l] = raw[:, l]
            l += 1
            continue
        f = raw[:, l]
        fbar = raw_conj[:, l]
        re = (f + fbar) / np.sqrt(2.0)
        im = (f - fbar) / (np.sqrt(2.0) * 1j)
        pair = np.column_stack([re, im]) @ pair_whitening(xi)
        out[:, l] = pair[:, 0]
        out[:, l + 1] = pair[:, 1]
        l += 2
    return out


def bank_frequency_matrix(bank: GobfBank, omegas,
                          real_outputs: bool = False) -> np.ndarray:
    """Entry (k, l) = F_l(e^{j omega_k}); column 0 is F_0 when present.

    With ``real_outputs`` the dynamic columns are the real-coefficient
    recombination actually used for model channels (still complex-valued on
    the grid, but conjugate-symmetric in frequency).
    """
    om = np.atleast_1d(np.asarray(omegas, dtype=float))
    z = np.exp(1j * om)
    raw = _complex_columns(bank, z)
    if real_outputs and bank.n_dynamic > 0:
        raw_conj = np.conj(_complex_columns(bank, np.conj(z)))
        raw = _recombine_real(bank, raw, raw_conj)
    if bank.include_constant:
        return np.hstack([np.ones((len(z), 1), dtype=complex), raw])
    return raw


def bank_outputs(bank: GobfBank, u: Union[SignalRecord, np.ndarray],
                 mode: str = PERIODIC) -> np.ndarray:
    """Real N x n_outputs matrix of basis-filter outputs x_l = F_l u.

    Periodic mode filters on the record's DFT grid (exact steady state);
    zero-initial mode runs the cascaded one-pole recursions from rest,
    sharing the all-pass chain across basis functions.
    """
    if isinstance(u, SignalRecord):
        samples = u.samples
        periodic = u.periodic
    else:
        samples = np.asarray(u, dtype=float)
        periodic = True  # caller's responsibility when passing bare arrays
    n = len(samples)

    cols: list[np.ndarray] = []
    if bank.include_constant:
        cols.append(samples.astype(float))

    if bank.n_dynamic > 0:
        if mode == PERIODIC:
            if isinstance(u, SignalRecord) and not periodic:
                raise InvalidSpecError("periodic bank filtering needs a periodic input")
            z = np.exp(2j * np.pi * np.arange(n) / n)
            spectrum = dft(samples)
            fcols = _complex_columns(bank, z)
            raw = np.fft.ifft(fcols * spectrum[:, None], axis=0)
        elif mode == ZERO_INITIAL:
            raw = np.empty((n, bank.n_dynamic), dtype=complex)
            chain = samples.astype(complex)
            for l, xi in enumerate(bank.pole_sequence):
                gain = np.sqrt(1.0 - abs(xi) ** 2)
                raw[:, l] = lfilter([0.0, gain], [1.0, -xi], chain)
                chain = lfilter([-np.conj(xi), 1.0], [1.0, -xi], chain)
        else:
            raise InvalidSpecError(f"unknown filtering mode {mode!r}")

        raw_conj = np.conj(raw)  # time-domain conjugate equals the conj-coefficient output
        real_cols = _recombine_real(bank, raw, raw_conj)
        leak = np.max(np.abs(real_cols.imag)) if real_cols.size else 0.0
        scale = max(np.max(np.abs(real_cols.real)), 1.0) if real_cols.size else 1.0
        if leak > 1e-8 * scale:
            raise InvalidSpecError(
                f"basis outputs are not real (imaginary leakage {leak:.3e}); "
                "pole set is likely not conjugate closed"
            )
        cols.extend(real_cols[:, l].real for l in range(real_cols.shape[1]))

    return np.column_stack(cols) if cols else np.empty((n, 0))


# ---------------------------------------------------------------------------
# Diagnostics: Gram matrix, decay factor, series expansion
# ---------------------------------------------------------------------------

def gram_matrix(bank: GobfBank, n_points: int = 100_000,
                real_outputs: bool = False) -> np.ndarray:
    """Unit-circle Gram <F_a, F_b> by trapezoidal quadrature on n_points."""
    om = 2.0 * np.pi * np.arange(n_points) / n_points
    f = bank_frequency_matrix(bank, om, real_outputs=real_outputs)
    return (f.conj().T @ f) / n_points


def decay_rho(bank_poles: Union[PoleSet, np.ndarray],
              target_poles: Union[PoleSet, np.ndarray]) -> float:
    """Worst-case Blaschke mismatch between target poles and one pole block.

    rho = max_j prod_k |(p_j - xi_k) / (1 - p_j xi_k)|; zero when the bank
    contains the target poles exactly, below one for conjugate-closed stable
    sets.
    """
    xis = bank_poles.poles if isinstance(bank_poles, PoleSet) else np.asarray(bank_poles, complex)
    ps = target_poles.poles if isinstance(target_poles, PoleSet) else np.asarray(target_poles, complex)
    if len(xis) == 0 or len(ps) == 0:
        return 0.0
    best = 0.0
    for p in ps:
        prod = 1.0
        for xi in xis:
            prod *= abs((p - xi) / (1.0 - p * xi))
        best = max(best, float(prod))
    return best


@dataclass
class ExpansionResult:
    """Least-squares series expansion of a target transfer function on the bank."""

    coefficients: np.ndarray
    residual_sup: float
    rho: float
    eta_bound: float
    c_gobf: float
    residual_by_rep: Optional[list] = None

    def to_json_dict(self) -> dict:
        return {
            "coefficients": [float(c) for c in self.coefficients],
            "residual_sup": self.residual_sup,
            "rho": self.rho,
            "eta_bound": self.eta_bound,
            "c_gobf": self.c_gobf,
            "residual_by_rep": self.residual_by_rep,
        }


def _project_once(bank: GobfBank, response: np.ndarray, om: np.ndarray):
    basis = bank_frequency_matrix(bank, om, real_outputs=True)
    stacked = np.vstack([basis.real, basis.imag])
    rhs = np.concatenate([response.real, response.imag])
    if stacked.shape[1] > 0:
        cond = np.linalg.cond(stacked)
        if cond > _CONDITION_WARN:
            warnings.warn(f"projection basis condition number {cond:.2e}",
                          IllConditionedBasisWarning)
    alpha, *_ = np.linalg.lstsq(stacked, rhs, rcond=None)
    residual = float(np.max(np.abs(response - basis @ alpha)))
    return alpha, residual


def project_expansion(target: RationalTF, bank: GobfBank,
                      n_grid: int = _PROJECTION_GRID) -> ExpansionResult:
    """Expand a stable target on the bank and report the sup-norm residual.

    Also evaluates the residual for every lower repetition count, fits the
    smallest constant making the geometric bound c * eta^r / (1 - eta) hold
    on all of them (eta = rho), and reports the bound at the bank's own
    repetition count.
    """
    target_ps = tf_poles(target)
    if len(target_ps) > 0 and not target_ps.is_stable:
        raise UnstableFilterError("series expansion requires a stable target")

    om = np.linspace(0.0, np.pi, n_grid)
    response = freq_response(target, om)

    residuals = []
    for r in range(0, bank.n_rep + 1):
        alpha_r, res_r = _project_once(bank.sub_bank(r), response, om)
        residuals.append(res_r)
    alpha, residual_sup = alpha_r, residuals[-1]

    rho = decay_rho(bank.base_poles, target_ps)
    if rho < 1e-14 or rho >= 1.0 or bank.n_rep == 0:
        c_gobf = 0.0 if rho < 1e-14 else float("nan")
        eta_bound = 0.0 if rho < 1e-14 else float("nan")
    else:
        c_gobf = max(res * (1.0 - rho) / rho**r
                     for r, res in enumerate(residuals) if r >= 1)
        eta_bound = c_gobf * rho**bank.n_rep / (1.0 - rho)

    return ExpansionResult(
        coefficients=np.asarray(alpha, dtype=float),
        residual_sup=residual_sup,
        rho=rho,
        eta_bound=eta_bound,
        c_gobf=c_gobf,
        residual_by_rep=residuals,
    )
