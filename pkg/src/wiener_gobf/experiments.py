"""Monte-Carlo studies: convergence rates, pole-estimate rates, noisy-case
error distributions, repetition-count selection, and log-log slope fits.

Trials are independent work items seeded from (base_seed, trial, ...) so a
study is reproducible record-for-record regardless of execution order or
worker count.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from . import polymodel
from .errors import EstimationError, InvalidSpecError
from .pipeline import (
    FRF_PERIODIC,
    FRF_WELCH,
    IdentifyConfig,
    StaticNonlinearity,
    WienerSystem,
    _assemble,
    _bank_transient,
    estimate_bla_poles,
    identify,
    nrmse,
    predict,
    simulate,
    sup_error,
)
from .gobf import build_bank
from .ratfun import PERIODIC, ZERO_INITIAL, RationalTF, poles as tf_poles
from .signals import (
    MultisineSpec,
    derive_seed,
    generate_gaussian,
    generate_multisine,
    rms,
)

EX1_NF_GRID = (170, 341, 682, 1365, 2730, 5461, 10922)


# ---------------------------------------------------------------------------
# Reference systems
# ---------------------------------------------------------------------------

def example1_system() -> WienerSystem:
    """Third-order IIR block followed by x + 0.8 x^2 + 0.7 x^3, noise free."""
    g = RationalTF(b=np.array([1.0, 3.0, 3.0, 1.0]),
                   a=np.array([1.0, -2.1, 1.9, -0.7]))
    f = StaticNonlinearity(kind="polynomial",
                           coefficients=np.array([0.0, 1.0, 0.8, 0.7]))
    return WienerSystem(g=g, f=f)


def example1_multisine_spec(n_freqs: int, seed: int,
                            period_per_freq: int = 6) -> MultisineSpec:
    """Flat random-phase multisine with f_max = f_s/6 and unit rms."""
    return MultisineSpec(n_samples=period_per_freq * n_freqs, n_freqs=n_freqs,
                         target_rms=1.0, seed=seed)


def example2_g() -> RationalTF:
    return RationalTF(b=np.array([1.0, -0.3, 0.3]),
                      a=np.array([1.0, 0.3, -0.3]))


def example2_system(noise_variance: float = 0.01, noise_seed: int = 0) -> WienerSystem:
    """Second-order block with a saturation at (-0.4, 0.2) and white output noise."""
    from .signals import NoiseSpec

    f = StaticNonlinearity(kind="saturation", lower=-0.4, upper=0.2)
    noise = NoiseSpec(variance=noise_variance, seed=noise_seed) \
        if noise_variance > 0 else None
    return WienerSystem(g=example2_g(), f=f, output_noise=noise)


@lru_cache(maxsize=None)
def example2_polynomial_truth_coefficients(n_reference: int = 200_000,
                                           seed: int = 0x5E2) -> tuple:
    """Cubic that best approximates the saturation on reference x data.

    Fitted once on a long deterministic Gaussian record pushed through the
    linear block; the estimation-set distribution is the same, so this is the
    in-model-class variant of the saturation system.
    """
    from scipy.signal import lfilter

    u = generate_gaussian(n_reference, variance=1.0,
                          seed=derive_seed(seed, "poly-truth-input"))
    g = example2_g()
    x = lfilter(g.b, g.a, u.samples)
    y = np.clip(x, -0.4, 0.2)
    psi = np.vander(x, 4, increasing=True)
    gamma, *_ = np.linalg.lstsq(psi, y, rcond=None)
    return tuple(float(c) for c in gamma)


def example2_polynomial_system(noise_variance: float = 0.01,
                               noise_seed: int = 0) -> WienerSystem:
    from .signals import NoiseSpec

    gamma = np.array(example2_polynomial_truth_coefficients())
    f = StaticNonlinearity(kind="polynomial", coefficients=gamma)
    noise = NoiseSpec(variance=noise_variance, seed=noise_seed) \
        if noise_variance > 0 else None
    return WienerSystem(g=example2_g(), f=f, output_noise=noise)


SYSTEM_PRESETS = {
    "example1": example1_system,
    "example2_saturation": example2_system,
    "example2_polynomial": example2_polynomial_system,
}


# ---------------------------------------------------------------------------
# Study configuration and records
# ---------------------------------------------------------------------------

CONVERGENCE = "convergence"
NOISE = "noise"
POLE_RATE = "pole_rate"
MODEL_SELECT = "model_select"

_STUDY_KINDS = (CONVERGENCE, NOISE, POLE_RATE, MODEL_SELECT)


@dataclass(frozen=True)
class StudyConfig:
    """One Monte-Carlo study: grids, trial count, seeds, and fit settings.

    Desk-scale defaults (20 convergence / 200 noise trials) keep runtimes in
    minutes; the paper-scale counts are reachable through ``n_trials``.
    """

    kind: str
    system: WienerSystem
    n_trials: int
    base_seed: int = 0
    n_freqs_grid: Sequence[int] = EX1_NF_GRID
    n_rep_set: Sequence[int] = (1, 2, 3)
    n_a: int = 3
    n_b: int = 3
    degree: int = 3
    basis: str = polymodel.HERMITE
    period_per_freq: int = 6
    input_rms: float = 1.0
    validation_n_freqs: int = 10922
    # noise-study data sizes (Example-2 protocol)
    n_samples: int = 1000
    input_variance: float = 1.0
    welch_segment: Optional[int] = 250

    def validate(self) -> None:
        if self.kind not in _STUDY_KINDS:
            raise InvalidSpecError(f"unknown study kind {self.kind!r}")
        if self.n_trials < 0:
            raise InvalidSpecError("n_trials must be >= 0")
        if self.kind in (CONVERGENCE, POLE_RATE) and len(self.n_freqs_grid) == 0:
            raise InvalidSpecError("n_freqs_grid must be nonempty")
        if len(self.n_rep_set) == 0:
            raise InvalidSpecError("n_rep_set must be nonempty")

    def identify_config(self, n_rep: int, periodic: bool = True) -> IdentifyConfig:
        return IdentifyConfig(
            n_a=self.n_a, n_b=self.n_b, n_rep=n_rep, degree=self.degree,
            basis=self.basis,
            filtering=PERIODIC if periodic else ZERO_INITIAL,
            frf_method=FRF_PERIODIC if periodic else FRF_WELCH,
            welch_segment=self.welch_segment,
        )

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "system": self.system.to_json_dict(),
            "n_trials": self.n_trials,
            "base_seed": self.base_seed,
            "n_freqs_grid": list(self.n_freqs_grid),
            "n_rep_set": list(self.n_rep_set),
            "n_a": self.n_a,
            "n_b": self.n_b,
            "degree": self.degree,
            "basis": self.basis,
            "period_per_freq": self.period_per_freq,
            "input_rms": self.input_rms,
            "validation_n_freqs": self.validation_n_freqs,
            "n_samples": self.n_samples,
            "input_variance": self.input_variance,
            "welch_segment": self.welch_segment,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "StudyConfig":
        import dataclasses

        doc = dict(doc)
        system = doc.pop("system")
        if isinstance(system, dict) and "preset" in system:
            system = SYSTEM_PRESETS[system["preset"]]()
        elif isinstance(system, str):
            system = SYSTEM_PRESETS[system]()
        else:
            system = WienerSystem.from_json_dict(system)
        known = {f.name for f in dataclasses.fields(cls)} - {"system"}
        kwargs = {k: v for k, v in doc.items() if k in known}
        for seq_key in ("n_freqs_grid", "n_rep_set"):
            if seq_key in kwargs:
                kwargs[seq_key] = tuple(kwargs[seq_key])
        return cls(system=system, **kwargs)


@dataclass
class TrialRecord:
    """One (trial, condition) outcome; blank fields do not apply to the study."""

    study: str
    trial: int
    n_freqs: Optional[int] = None
    n_rep: Optional[int] = None
    sup_error: Optional[float] = None
    nrmse: Optional[float] = None
    pole_error: Optional[float] = None
    noise_floor: Optional[float] = None
    selected: Optional[bool] = None
    failed: bool = False
    message: str = ""

    CSV_FIELDS = ("study", "trial", "n_freqs", "n_rep", "sup_error", "nrmse",
                  "pole_error", "noise_floor", "selected", "failed", "message")

    def to_csv_row(self) -> list:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return f"{v:.17g}"
            return str(v)
        return [fmt(getattr(self, f)) for f in self.CSV_FIELDS]

    @classmethod
    def from_csv_row(cls, row: dict) -> "TrialRecord":
        def opt_int(v):
            return int(v) if v not in ("", None) else None

        def opt_float(v):
            return float(v) if v not in ("", None) else None

        return cls(
            study=row["study"],
            trial=int(row["trial"]),
            n_freqs=opt_int(row["n_freqs"]),
            n_rep=opt_int(row["n_rep"]),
            sup_error=opt_float(row["sup_error"]),
            nrmse=opt_float(row["nrmse"]),
            pole_error=opt_float(row["pole_error"]),
            noise_floor=opt_float(row["noise_floor"]),
            selected=None if row["selected"] in ("", None)
            else row["selected"] == "True",
            failed=row["failed"] == "True",
            message=row.get("message", ""),
        )


@dataclass
class StudyResult:
    config: StudyConfig
    records: list = field(default_factory=list)

    @property
    def ok_records(self) -> list:
        return [r for r in self.records if not r.failed]

    @property
    def n_failed(self) -> int:
        return sum(r.failed for r in self.records)

    # -- aggregation --------------------------------------------------------

    def aggregates(self) -> dict:
        """Per-condition statistics recomputed from the records."""
        out = {"kind": self.config.kind,
               "n_trials": self.config.n_trials,
               "n_records": len(self.records),
               "n_failed": self.n_failed,
               "conditions": []}
        keyfn = lambda r: (r.n_rep, r.n_freqs)
        records = sorted(self.ok_records,
                         key=lambda r: (r.n_rep if r.n_rep is not None else -1,
                                        r.n_freqs if r.n_freqs is not None else -1))
        for key, group in itertools.groupby(records, key=keyfn):
            group = list(group)
            cond = {"n_rep": key[0], "n_freqs": key[1], "count": len(group)}
            for metric in ("sup_error", "nrmse", "pole_error", "noise_floor"):
                vals = np.array([getattr(r, metric) for r in group
                                 if getattr(r, metric) is not None], dtype=float)
                if len(vals) == 0:
                    continue
                cond[metric] = {
                    "mean": float(np.mean(vals)),
                    "std": float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0,
                    "std_of_mean": float(np.std(vals, ddof=1) / np.sqrt(len(vals)))
                    if len(vals) > 1 else 0.0,
                    "median": float(np.median(vals)),
                    "q25": float(np.quantile(vals, 0.25)),
                    "q75": float(np.quantile(vals, 0.75)),
                }
            sel = [r.selected for r in group if r.selected is not None]
            if sel:
                cond["selected_fraction"] = float(np.mean(sel))
            out["conditions"].append(cond)
        return out

    def mean_curve(self, metric: str, n_rep: Optional[int] = None) -> dict:
        """n_freqs -> mean metric, restricted to one repetition count.

        For per-(trial, n_freqs) metrics such as the pole error the records
        are deduplicated across n_rep first.
        """
        curve: dict[int, list] = {}
        seen = set()
        for r in self.ok_records:
            if r.n_freqs is None or getattr(r, metric) is None:
                continue
            if n_rep is not None and r.n_rep != n_rep:
                continue
            if n_rep is None:
                dedup = (r.trial, r.n_freqs)
                if dedup in seen:
                    continue
                seen.add(dedup)
            curve.setdefault(r.n_freqs, []).append(getattr(r, metric))
        return {nf: float(np.mean(v)) for nf, v in sorted(curve.items())}

    def slopes(self) -> dict:
        out = {}
        if self.config.kind in (CONVERGENCE,):
            for n_rep in self.config.n_rep_set:
                curve = self.mean_curve("sup_error", n_rep=n_rep)
                if len(curve) >= 3:
                    s, b, se = fit_loglog_slope(list(curve.items()))
                    out[f"sup_error_n_rep_{n_rep}"] = {
                        "slope": s, "intercept": b, "stderr": se}
        if self.config.kind in (CONVERGENCE, POLE_RATE):
            curve = self.mean_curve("pole_error")
            if len(curve) >= 3:
                s, b, se = fit_loglog_slope(list(curve.items()))
                out["pole_error"] = {"slope": s, "intercept": b, "stderr": se}
        return out

    # -- export -------------------------------------------------------------

    def write_records_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TrialRecord.CSV_FIELDS)
            for r in self.records:
                writer.writerow(r.to_csv_row())

    @staticmethod
    def read_records_csv(path) -> list:
        with open(path, newline="") as fh:
            return [TrialRecord.from_csv_row(row) for row in csv.DictReader(fh)]

    def write_aggregates_json(self, path) -> None:
        doc = {"aggregates": self.aggregates(), "slopes": self.slopes()}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)

    def write_plot_data(self, directory) -> list:
        """Two-column (n_freqs, mean) files per repetition count."""
        import os

        metric = "sup_error" if self.config.kind == CONVERGENCE else "nrmse"
        paths = []
        for n_rep in self.config.n_rep_set:
            curve = self.mean_curve(metric, n_rep=n_rep)
            if not curve:
                continue
            path = os.path.join(directory, f"{metric}_n_rep_{n_rep}.dat")
            with open(path, "w") as fh:
                for nf, val in curve.items():
                    fh.write(f"{nf} {val:.17g}\n")
            paths.append(path)
        if self.config.kind in (CONVERGENCE, POLE_RATE):
            curve = self.mean_curve("pole_error")
            if curve:
                path = os.path.join(directory, "pole_error.dat")
                with open(path, "w") as fh:
                    for nf, val in curve.items():
                        fh.write(f"{nf} {val:.17g}\n")
                paths.append(path)
        return paths


# ---------------------------------------------------------------------------
# Slope fitting and pole metrics
# ---------------------------------------------------------------------------

def fit_loglog_slope(points) -> tuple[float, float, float]:
    """Ordinary least squares on (log N_F, log value).

    Returns (slope, intercept, stderr of slope); nonpositive values are
    excluded with a warning.
    """
    pts = [(float(x), float(v)) for x, v in points]
    kept = [(x, v) for x, v in pts if v > 0 and x > 0]
    if len(kept) < len(pts):
        warnings.warn(f"excluded {len(pts) - len(kept)} nonpositive point(s) "
                      "from slope fit")
    if len(kept) < 3:
        raise InvalidSpecError("slope fit needs at least 3 positive points")
    lx = np.log([x for x, _ in kept])
    ly = np.log([v for _, v in kept])
    n = len(kept)
    vx = lx - lx.mean()
    slope = float(np.dot(vx, ly - ly.mean()) / np.dot(vx, vx))
    intercept = float(ly.mean() - slope * lx.mean())
    resid = ly - (intercept + slope * lx)
    dof = n - 2
    stderr = float(np.sqrt(np.dot(resid, resid) / dof / np.dot(vx, vx))) if dof > 0 else 0.0
    return slope, intercept, stderr


def min_max_pole_distance(estimated, reference) -> float:
    """min over assignments of max_j |p_hat_sigma(j) - p_j|.

    Exhaustive for up to 6 poles; larger sets fall back to the Hungarian
    assignment on summed distances.
    """
    est = np.asarray(estimated, dtype=complex)
    ref = np.asarray(reference, dtype=complex)
    if len(est) != len(ref):
        raise InvalidSpecError("pole sets must have equal size")
    n = len(ref)
    if n == 0:
        return 0.0
    if n <= 6:
        best = math.inf
        for perm in itertools.permutations(range(n)):
            d = max(abs(est[list(perm)][j] - ref[j]) for j in range(n))
            best = min(best, d)
        return float(best)
    from scipy.optimize import linear_sum_assignment

    cost = np.abs(est[:, None] - ref[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max())


# ---------------------------------------------------------------------------
# Study runners
# ---------------------------------------------------------------------------

def _convergence_validation(cfg: StudyConfig):
    """Fixed validation multisine + noiseless response, shared by all trials."""
    spec = MultisineSpec(
        n_samples=cfg.period_per_freq * cfg.validation_n_freqs,
        n_freqs=cfg.validation_n_freqs,
        target_rms=cfg.input_rms,
        seed=derive_seed(cfg.base_seed, "validation"),
    )
    u_val = generate_multisine(spec)
    _, y_val = simulate(cfg.system, u_val, mode=PERIODIC, include_noise=False)
    return u_val, y_val


def _true_poles(cfg: StudyConfig) -> np.ndarray:
    return tf_poles(cfg.system.g).poles


def _convergence_trial(cfg: StudyConfig, trial: int, validation) -> list:
    u_val, y_val = validation
    truth = _true_poles(cfg)
    records = []
    for nf in cfg.n_freqs_grid:
        spec = example1_multisine_spec(
            nf, seed=derive_seed(cfg.base_seed, "trial", trial, "nf", nf),
            period_per_freq=cfg.period_per_freq)
        spec = replace(spec, target_rms=cfg.input_rms)
        u = generate_multisine(spec)
        system = cfg.system.with_noise_seed(
            derive_seed(cfg.base_seed, "trial", trial, "noise", nf))
        _, y = simulate(system, u, mode=PERIODIC)

        icfg = cfg.identify_config(n_rep=max(cfg.n_rep_set), periodic=True)
        try:
            pole_set, fit = estimate_bla_poles(u, y, icfg)
            pole_error = min_max_pole_distance(fit.poles.poles, truth)
        except EstimationError as exc:
            records.extend(
                TrialRecord(cfg.kind, trial, n_freqs=nf, n_rep=n_rep,
                            failed=True, message=str(exc))
                for n_rep in cfg.n_rep_set)
            continue

        for n_rep in cfg.n_rep_set:
            try:
                bank = build_bank(pole_set, n_rep)
                model = _assemble(u, y, bank,
                                  cfg.identify_config(n_rep=n_rep, periodic=True),
                                  fit)
                yhat = predict(model, u_val)
                records.append(TrialRecord(
                    cfg.kind, trial, n_freqs=nf, n_rep=n_rep,
                    sup_error=sup_error(y_val, yhat),
                    nrmse=nrmse(y_val, yhat),
                    pole_error=pole_error,
                ))
            except Exception as exc:  # robust statistics over silent skew
                records.append(TrialRecord(cfg.kind, trial, n_freqs=nf,
                                           n_rep=n_rep, failed=True,
                                           message=str(exc)))
    return records


def _pole_rate_trial(cfg: StudyConfig, trial: int, validation=None) -> list:
    truth = _true_poles(cfg)
    records = []
    for nf in cfg.n_freqs_grid:
        spec = example1_multisine_spec(
            nf, seed=derive_seed(cfg.base_seed, "trial", trial, "nf", nf),
            period_per_freq=cfg.period_per_freq)
        spec = replace(spec, target_rms=cfg.input_rms)
        u = generate_multisine(spec)
        system = cfg.system.with_noise_seed(
            derive_seed(cfg.base_seed, "trial", trial, "noise", nf))
        _, y = simulate(system, u, mode=PERIODIC)
        try:
            _, fit = estimate_bla_poles(u, y, cfg.identify_config(1, periodic=True))
            records.append(TrialRecord(
                cfg.kind, trial, n_freqs=nf,
                pole_error=min_max_pole_distance(fit.poles.poles, truth)))
        except EstimationError as exc:
            records.append(TrialRecord(cfg.kind, trial, n_freqs=nf,
                                       failed=True, message=str(exc)))
    return records


def _noise_trial(cfg: StudyConfig, trial: int, validation=None) -> list:
    u_est = generate_gaussian(
        cfg.n_samples, variance=cfg.input_variance,
        seed=derive_seed(cfg.base_seed, "trial", trial, "u-est"))
    u_val = generate_gaussian(
        cfg.n_samples, variance=cfg.input_variance,
        seed=derive_seed(cfg.base_seed, "trial", trial, "u-val"))
    sys_est = cfg.system.with_noise_seed(
        derive_seed(cfg.base_seed, "trial", trial, "e-est"))
    sys_val = cfg.system.with_noise_seed(
        derive_seed(cfg.base_seed, "trial", trial, "e-val"))

    _, y_est = simulate(sys_est, u_est, mode=ZERO_INITIAL)
    _, y_val = simulate(sys_val, u_val, mode=ZERO_INITIAL)
    _, y_val_clean = simulate(sys_val, u_val, mode=ZERO_INITIAL, include_noise=False)

    variance = cfg.system.output_noise.variance if cfg.system.output_noise else 0.0
    floor = float(np.sqrt(variance) / rms(y_val_clean.samples)) \
        if rms(y_val_clean.samples) > 0 else 0.0

    records = []
    scores = {}
    for n_rep in cfg.n_rep_set:
        icfg = cfg.identify_config(n_rep=n_rep, periodic=False)
        try:
            model = identify(u_est, y_est, icfg)
            yhat = predict(model, u_val)
            discard = _bank_transient(model.bank, cfg.n_samples)
            err = nrmse(y_val, yhat, discard=discard)
            scores[n_rep] = err
            records.append(TrialRecord(cfg.kind, trial, n_rep=n_rep,
                                       nrmse=err, noise_floor=floor))
        except Exception as exc:
            records.append(TrialRecord(cfg.kind, trial, n_rep=n_rep,
                                       failed=True, message=str(exc)))
    if scores:
        best = min(scores, key=scores.get)
        for rec in records:
            if not rec.failed:
                rec.selected = rec.n_rep == best
    return records


_TRIAL_RUNNERS = {
    CONVERGENCE: _convergence_trial,
    POLE_RATE: _pole_rate_trial,
    NOISE: _noise_trial,
    MODEL_SELECT: _noise_trial,
}


def _run_study(cfg: StudyConfig, jobs: int = 1,
               skip_trials: Optional[set] = None) -> StudyResult:
    cfg.validate()
    runner = _TRIAL_RUNNERS[cfg.kind]
    validation = _convergence_validation(cfg) if cfg.kind == CONVERGENCE else None
    trials = [t for t in range(cfg.n_trials)
              if not skip_trials or t not in skip_trials]

    records: list = []
    if jobs <= 1 or len(trials) <= 1:
        for t in trials:
            records.extend(runner(cfg, t, validation))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(runner, cfg, t, validation) for t in trials]
            for fut in futures:  # submission order keeps records deterministic
                records.extend(fut.result())
    return StudyResult(config=cfg, records=records)


def run_convergence_study(cfg: StudyConfig, jobs: int = 1,
                          skip_trials: Optional[set] = None) -> StudyResult:
    """Per (trial, N_F): fresh phases, identify at each n_rep, record the
    validation sup-norm error (and the pole error for the rate study)."""
    if cfg.kind != CONVERGENCE:
        cfg = replace(cfg, kind=CONVERGENCE)
    return _run_study(cfg, jobs=jobs, skip_trials=skip_trials)


def run_pole_rate_study(cfg: StudyConfig, jobs: int = 1,
                        skip_trials: Optional[set] = None) -> StudyResult:
    if cfg.kind != POLE_RATE:
        cfg = replace(cfg, kind=POLE_RATE)
    return _run_study(cfg, jobs=jobs, skip_trials=skip_trials)


def run_noise_study(cfg: StudyConfig, jobs: int = 1,
                    skip_trials: Optional[set] = None) -> StudyResult:
    """Estimation + validation Gaussian data sets per trial; one model per
    repetition count; NRMSE against the noisy validation output; the
    validation-NRMSE minimizer is flagged as selected."""
    if cfg.kind not in (NOISE, MODEL_SELECT):
        cfg = replace(cfg, kind=NOISE)
    return _run_study(cfg, jobs=jobs, skip_trials=skip_trials)


def run_study(cfg: StudyConfig, jobs: int = 1,
              skip_trials: Optional[set] = None) -> StudyResult:
    return _run_study(cfg, jobs=jobs, skip_trials=skip_trials)
