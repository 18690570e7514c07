"""Curve fitting, ballistic-expansion thermometry and heterodyne demodulation."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import signal

from gemsim.errors import DomainError
from gemsim.model import BOLTZMANN

MAX_ITERATIONS = 200
STEP_TOLERANCE = 1e-9


@dataclass
class FitResult:
    parameters: dict
    covariance: np.ndarray
    residual_norm: float
    converged: bool
    iterations: int
    initial_residual_norm: float = math.nan
    message: str = ""
    excluded: int = 0

    def __getitem__(self, name):
        return self.parameters[name]

    def stderr(self) -> dict:
        diag = np.diag(self.covariance) if self.covariance.size else []
        return {
            k: (math.sqrt(v) if v >= 0 else math.nan)
            for k, v in zip(self.parameters, diag)
        }

    def to_dict(self) -> dict:
        return {
            "parameters": {k: float(v) for k, v in self.parameters.items()},
            "stderr": self.stderr(),
            "covariance": np.asarray(self.covariance, dtype=float).tolist(),
            "residual_norm": float(self.residual_norm),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "excluded": int(self.excluded),
            "message": self.message,
        }

    def to_json(self) -> str:
        return json.dumps(_finite(self.to_dict()), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [f"{k}={float(v)!r}" for k, v in self.parameters.items()]
        lines += [f"{k}_stderr={v!r}" for k, v in self.stderr().items()]
        lines += [
            f"residual_norm={float(self.residual_norm)!r}",
            f"converged={str(bool(self.converged)).lower()}",
            f"iterations={int(self.iterations)}",
            f"excluded={int(self.excluded)}",
        ]
        return "\n".join(lines) + "\n"


def _finite(obj):
    # JSON has no inf/nan
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    return obj


def levenberg_marquardt(
    model: Callable,
    jacobian: Callable,
    x: np.ndarray,
    y: np.ndarray,
    p0: np.ndarray,
    scale: np.ndarray,
    max_iterations: int = MAX_ITERATIONS,
    xtol: float = STEP_TOLERANCE,
):
    """Damped Gauss-Newton with Marquardt's diagonal scaling.

    Steps that do not lower the sum of squares are rejected, so the returned
    residual never exceeds the initial one.  Convergence is declared when the
    accepted step is below ``xtol`` relative to ``max(|p|, scale)`` in every
    parameter, or when the residual vanishes.

    Returns ``(p, cost, converged, iterations, jac)``.
    """
    p = np.array(p0, dtype=float)
    r = model(x, p) - y
    cost = float(r @ r)
    lam = 1e-3
    converged = False
    it = 0
    j = jacobian(x, p)
    for it in range(1, max_iterations + 1):
        if cost == 0.0:
            converged = True
            break
        jtj = j.T @ j
        g = j.T @ r
        d = np.diag(jtj).copy()
        d[d <= 0] = 1e-300
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(d), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = p + step
            r_new = model(x, trial) - y
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                accepted = True
                break
            lam *= 10
        if not accepted:
            # no downhill direction left: stationary point
            converged = bool(np.all(np.isfinite(p)))
            break
        small = np.all(np.abs(step) <= xtol * np.maximum(np.abs(p), scale))
        p, r, cost = trial, r_new, cost_new
        j = jacobian(x, p)
        lam = max(lam / 10, 1e-12)
        if small:
            converged = True
            break
    return p, cost, converged, it, j


def _covariance(j, cost, n, k):
    dof = max(n - k, 1)
    try:
        return np.linalg.pinv(j.T @ j) * (cost / dof)
    except np.linalg.LinAlgError:
        return np.full((k, k), np.nan)


def _prepare(x, y, minimum):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise DomainError("x and y must have the same length")
    if len(x) < minimum:
        raise DomainError(f"need at least {minimum} points, got {len(x)}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DomainError("x and y must be finite")
    return x, y


def _degenerate(names, y, reason):
    k = len(names)
    res = float(np.linalg.norm(y - y.mean()))
    return FitResult(
        parameters={n: math.nan for n in names},
        covariance=np.full((k, k), np.nan),
        residual_norm=res,
        converged=False,
        iterations=0,
        initial_residual_norm=res,
        message=reason,
    )


def _peak_guess(x, y):
    order = np.argsort(x)
    x, y = x[order], y[order]
    n_edge = max(1, len(y) // 10)
    offset = float(np.median(np.concatenate([y[:n_edge], y[-n_edge:]])))
    k = int(np.argmax(y))
    amp = float(y[k] - offset)
    half = offset + amp / 2
    above = np.nonzero(y >= half)[0]
    width = float(x[above[-1]] - x[above[0]]) if len(above) > 1 else 0.0
    if width <= 0:
        width = float(np.median(np.diff(x))) * 2
    return float(x[k]), width, amp, offset


def _run(names, model, jac, x, y, p0, scale):
    r0 = model(x, p0) - y
    init = float(np.linalg.norm(r0))
    p, cost, conv, it, j = levenberg_marquardt(model, jac, x, y, p0, scale)
    return FitResult(
        parameters=dict(zip(names, (float(v) for v in p))),
        covariance=_covariance(j, cost, len(x), len(p)),
        residual_norm=math.sqrt(cost),
        converged=conv,
        iterations=it,
        initial_residual_norm=init,
        message="converged" if conv else "iteration limit reached",
    )


def lorentzian(x, center, fwhm, amplitude, offset=0.0):
    hw2 = (fwhm / 2) ** 2
    return amplitude * hw2 / ((x - center) ** 2 + hw2) + offset


def _lor_model(x, p):
    return lorentzian(x, *p)


def _lor_jac(x, p):
    c, w, a, _ = p
    u = x - c
    hw2 = w * w / 4
    den = u * u + hw2
    f = hw2 / den
    j = np.empty((len(x), 4))
    j[:, 0] = a * hw2 * 2 * u / den ** 2
    j[:, 1] = a * (w / 2) * u * u / den ** 2
    j[:, 2] = f
    j[:, 3] = 1.0
    return j


LORENTZIAN_PARAMS = ("center", "fwhm", "amplitude", "offset")
GAUSSIAN_PARAMS = ("mean", "sigma", "amplitude", "offset")
EXPONENTIAL_PARAMS = ("amplitude", "tau")


def fit_lorentzian(x, y, initial_guess: Optional[Sequence[float]] = None) -> FitResult:
    """Fit ``A*(w/2)**2/((x-c)**2 + (w/2)**2) + offset``.

    Parameters come back as ``center``, ``fwhm`` (positive), ``amplitude`` and
    ``offset``.  Flat data gives a non-converged result rather than raising.
    """
    x, y = _prepare(x, y, 5)
    if np.ptp(y) == 0:
        return _degenerate(LORENTZIAN_PARAMS, y, "zero variance in y")
    p0 = np.array(initial_guess if initial_guess is not None else _peak_guess(x, y), float)
    scale = np.array([np.ptp(x), np.ptp(x), np.ptp(y), np.ptp(y)])
    res = _run(LORENTZIAN_PARAMS, _lor_model, _lor_jac, x, y, p0, scale)
    res.parameters["fwhm"] = abs(res.parameters["fwhm"])
    return res


def gaussian(x, mean, sigma, amplitude, offset=0.0):
    return amplitude * np.exp(-((x - mean) ** 2) / (2 * sigma * sigma)) + offset


def _gau_model(x, p):
    return gaussian(x, *p)


def _gau_jac(x, p):
    m, s, a, _ = p
    u = x - m
    e = np.exp(-u * u / (2 * s * s))
    j = np.empty((len(x), 4))
    j[:, 0] = a * e * u / (s * s)
    j[:, 1] = a * e * u * u / s ** 3
    j[:, 2] = e
    j[:, 3] = 1.0
    return j


def fit_gaussian(x, y, initial_guess: Optional[Sequence[float]] = None) -> FitResult:
    """Fit ``A*exp(-(x-mean)**2/(2*sigma**2)) + offset``."""
    x, y = _prepare(x, y, 5)
    if np.ptp(y) == 0:
        return _degenerate(GAUSSIAN_PARAMS, y, "zero variance in y")
    if initial_guess is None:
        c, w, a, off = _peak_guess(x, y)
        initial_guess = (c, w / (2 * math.sqrt(2 * math.log(2))), a, off)
    p0 = np.array(initial_guess, float)
    scale = np.array([np.ptp(x), np.ptp(x), np.ptp(y), np.ptp(y)])
    res = _run(GAUSSIAN_PARAMS, _gau_model, _gau_jac, x, y, p0, scale)
    res.parameters["sigma"] = abs(res.parameters["sigma"])
    return res


def _exp_model(t, p):
    return p[0] * np.exp(-p[1] * t)


def _exp_jac(t, p):
    e = np.exp(-p[1] * t)
    return np.column_stack([e, -p[0] * t * e])


def fit_exponential_decay(t, y, weighted: bool = False) -> FitResult:
    """Fit ``A*exp(-t/tau)``.

    Seeded by a straight-line fit to ``log(y)``, then refined by least squares
    on the linear data (on the log data when ``weighted``, which suits
    relative noise).  Non-positive samples are dropped and counted in
    ``excluded``.  The fit runs in the decay rate ``1/tau`` so a flat series
    converges to a zero rate; that case is reported with ``tau=inf`` and
    ``converged=False``.
    """
    t, y = _prepare(t, y, 3)
    keep = y > 0
    excluded = int((~keep).sum())
    if excluded:
        warnings.warn(f"excluded {excluded} non-positive samples from decay fit", stacklevel=2)
    t, y = t[keep], y[keep]
    if len(t) < 3 or np.ptp(t) == 0:
        res = _degenerate(EXPONENTIAL_PARAMS, y if len(y) else np.zeros(1), "too few usable points")
        res.excluded = excluded
        return res
    slope, intercept = np.polyfit(t, np.log(y), 1)
    p0 = np.array([math.exp(intercept), -slope])
    scale = np.array([float(np.max(y)), 1.0 / float(np.ptp(t))])
    if weighted:
        model = lambda tt, p: np.log(np.abs(p[0])) - p[1] * tt  # noqa: E731
        jac = lambda tt, p: np.column_stack([np.full_like(tt, 1 / p[0]), -tt])  # noqa: E731
        res = _run(("amplitude", "rate"), model, jac, t, np.log(y), p0, scale)
    else:
        res = _run(("amplitude", "rate"), _exp_model, _exp_jac, t, y, p0, scale)
    amp, rate = res.parameters["amplitude"], res.parameters["rate"]
    cov = res.covariance
    # delta method: tau = 1/rate
    jac_tau = np.array([[1.0, 0.0], [0.0, -1.0 / rate ** 2 if rate else math.nan]])
    res.covariance = jac_tau @ cov @ jac_tau.T
    unbounded = rate <= 0 or rate * float(np.ptp(t)) < 1e-6
    res.parameters = {"amplitude": amp, "tau": (1.0 / rate) if rate > 0 else math.inf}
    if unbounded:
        res.converged = False
        res.parameters["tau"] = math.inf
        res.message = "decay time unbounded (no measurable decay)"
    res.excluded = excluded
    return res


def fit_gaussian_decay(t, y) -> FitResult:
    """Fit ``log(y) = log(A) - t/tau_lin - (t/tau)**2`` by linear least squares.

    The quadratic term captures Gaussian (motional) dephasing; the linear term
    absorbs any exponential part and time offset.  ``residual_norm`` is in log
    units, comparable with :func:`log_linear_residual`.
    """
    t, y = _prepare(t, y, 4)
    keep = y > 0
    t, y = t[keep], y[keep]
    a = np.column_stack([np.ones_like(t), -t, -(t ** 2)])
    coef, *_ = np.linalg.lstsq(a, np.log(y), rcond=None)
    resid = np.log(y) - a @ coef
    cost = float(resid @ resid)
    k = coef[2]
    return FitResult(
        parameters={
            "amplitude": math.exp(coef[0]),
            "rate": float(coef[1]),
            "tau": 1 / math.sqrt(k) if k > 0 else math.inf,
        },
        covariance=_covariance(a, cost, len(t), 3),
        residual_norm=math.sqrt(cost),
        converged=bool(k > 0),
        iterations=1,
        excluded=int((~keep).sum()),
    )


def log_linear_residual(t, y) -> float:
    """Residual norm of a straight-line fit to ``log(y)`` (pure exponential)."""
    t, y = _prepare(t, y, 3)
    keep = y > 0
    coef = np.polyfit(t[keep], np.log(y[keep]), 1)
    resid = np.log(y[keep]) - np.polyval(coef, t[keep])
    return float(np.linalg.norm(resid))


@dataclass
class TemperatureResult:
    temperature: float
    sigma0: float
    physical: bool = True
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "temperature_k": self.temperature,
            "sigma0_m": self.sigma0,
            "physical": self.physical,
            "warnings": list(self.warnings),
        }


def temperature_from_expansion(times, sigmas, mass: float) -> TemperatureResult:
    """Temperature from ballistic expansion, ``sigma**2 = sigma0**2 + (kB*T/m)*t**2``.

    Linear least squares of ``sigma**2`` against ``t**2``.  A shrinking cloud
    gives a negative slope; that is flagged and the temperature clamped to 0.
    """
    t = np.asarray(times, dtype=float).ravel()
    s = np.asarray(sigmas, dtype=float).ravel()
    if t.shape != s.shape:
        raise DomainError("times and sigmas must have the same length")
    if len(t) < 2:
        raise DomainError(f"need at least 2 time points, got {len(t)}")
    if not mass > 0:
        raise DomainError(f"mass must be > 0, got {mass}")
    if np.ptp(t ** 2) == 0:
        raise DomainError("need at least two distinct expansion times")
    a = np.column_stack([np.ones_like(t), t ** 2])
    (intercept, slope), *_ = np.linalg.lstsq(a, s ** 2, rcond=None)
    notes = []
    physical = True
    if slope < 0:
        msg = "cloud width decreases with time; temperature clamped to 0"
        warnings.warn(msg, stacklevel=2)
        notes.append(msg)
        physical = False
        slope = 0.0
    if intercept < 0:
        notes.append("negative extrapolated initial width; sigma0 clamped to 0")
        intercept = 0.0
    return TemperatureResult(
        temperature=float(slope * mass / BOLTZMANN),
        sigma0=float(math.sqrt(intercept)),
        physical=physical,
        warnings=notes,
    )


@dataclass(frozen=True)
class HeterodyneRecord:
    samples: np.ndarray
    sample_rate: float
    intermediate_frequency: float

    def __post_init__(self):
        if not self.intermediate_frequency > 0:
            raise DomainError("intermediate_frequency must be > 0")
        if not self.sample_rate > 2 * self.intermediate_frequency:
            raise DomainError(
                f"sample_rate {self.sample_rate} Hz must exceed twice the "
                f"intermediate frequency {self.intermediate_frequency} Hz"
            )

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.samples)) / self.sample_rate


def demodulate(record: HeterodyneRecord, phase: float = 0.0, lowpass_cutoff: Optional[float] = None):
    """In-phase baseband amplitude: mix with the IF, zero-phase low-pass, times 2."""
    f_if = record.intermediate_frequency
    cutoff = f_if / 5 if lowpass_cutoff is None else lowpass_cutoff
    if not 0 < cutoff < f_if:
        raise DomainError(f"lowpass cutoff {cutoff} Hz must lie in (0, {f_if}) Hz")
    x = np.asarray(record.samples, dtype=float)
    mixed = x * np.cos(2 * math.pi * f_if * record.times + phase)
    sos = signal.butter(2, cutoff, btype="low", fs=record.sample_rate, output="sos")
    return 2.0 * signal.sosfiltfilt(sos, mixed)


def demodulate_and_square(
    record: HeterodyneRecord, phase: float = 0.0, lowpass_cutoff: Optional[float] = None
) -> np.ndarray:
    """Intensity envelope of a single heterodyne record."""
    return demodulate(record, phase, lowpass_cutoff) ** 2


def demodulate_traces(
    records: Sequence[HeterodyneRecord],
    phase: float = 0.0,
    lowpass_cutoff: Optional[float] = None,
    order: str = "average-then-square",
) -> np.ndarray:
    """Intensity envelope of several repeated records.

    ``average-then-square`` averages the demodulated amplitudes first (as in
    the experiment); ``square-then-average`` averages the per-trace
    intensities.
    """
    amps = np.array([demodulate(r, phase, lowpass_cutoff) for r in records])
    if order == "average-then-square":
        return amps.mean(axis=0) ** 2
    if order == "square-then-average":
        return (amps ** 2).mean(axis=0)
    raise DomainError(f"unknown order {order!r}")


@dataclass(frozen=True)
class TraceEfficiency:
    efficiency: float
    std: float
    sem: float
    n_input: int
    n_echo: int

    def to_dict(self) -> dict:
        return {
            "efficiency": self.efficiency,
            "std": self.std,
            "sem": self.sem,
            "n_input": self.n_input,
            "n_echo": self.n_echo,
        }


def efficiency_from_traces(input_traces, echo_traces, dt: float = 1.0) -> TraceEfficiency:
    """Mean integrated echo over mean integrated input intensity.

    Each argument is one trace or a stack of traces on a common sample grid.
    ``std`` propagates the per-trace standard deviations; ``sem`` propagates
    the standard errors of the two means.
    """
    a = np.atleast_2d(np.asarray(input_traces, dtype=float))
    b = np.atleast_2d(np.asarray(echo_traces, dtype=float))
    ia = a.sum(axis=1) * dt
    ib = b.sum(axis=1) * dt
    mean_in, mean_echo = ia.mean(), ib.mean()
    if not mean_in > 0:
        raise DomainError("input energy is zero")
    eff = float(mean_echo / mean_in)
    sd_in = ia.std(ddof=1) if len(ia) > 1 else 0.0
    sd_echo = ib.std(ddof=1) if len(ib) > 1 else 0.0
    rel_std = math.hypot(sd_in / mean_in, sd_echo / mean_echo if mean_echo else 0.0)
    rel_sem = math.hypot(
        sd_in / mean_in / math.sqrt(len(ia)),
        (sd_echo / mean_echo if mean_echo else 0.0) / math.sqrt(len(ib)),
    )
    return TraceEfficiency(eff, eff * rel_std, eff * rel_sem, len(ia), len(ib))
