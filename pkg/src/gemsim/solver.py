"""1D linearised gradient echo memory solver.

In the co-moving frame with the excited state adiabatically eliminated, the
probe envelope ``E(z, t)`` and the ground-state coherence ``S(z, t)`` obey::

    dS/dt = -(Gamma(t) + 2j*pi*(eta(t)*(z - l/2) - delta)) * S + 1j*kappa*E
    dE/dz = 1j*kappa*S

``E`` has no time derivative, so at every instant it is rebuilt from ``S`` by
cumulative integration along z and ``S`` is advanced by classic RK4.

The medium is cut into ``n_z`` cells.  Each cell is driven by the field at its
centre, ``E_j + 1j*kappa*dz*S_j/2``, which makes the discrete system exactly
passive: ``|E_in|**2 - |E_out|**2`` equals the growth rate of
``sum(|S|**2) * dz`` when ``Gamma = 0``.

``kappa**2 * l`` is the frequency-integrated Raman optical depth
(:func:`gemsim.model.raman_area`).  For a gradient wide compared with the pulse
spectrum the single-pass transmission is then ``exp(-kappa**2 / |eta|)``,
which is exactly ``exp(-raman_exponent)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from gemsim.errors import DomainError, NumericalInstabilityError
from gemsim.model import (
    EnsembleProfile,
    GradientSchedule,
    RamanCoupling,
    TransitionLine,
    raman_area,
)

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
PULSE_SHAPES = ("gaussian", "custom-sampled")
DECOHERENCE_FORMS = ("exponential", "gaussian-quadrature")


@dataclass(frozen=True)
class ProbePulse:
    """Input probe envelope.

    ``fwhm`` is the intensity full width at half maximum.  A custom pulse is
    given by complex samples ``samples`` at times ``sample_times`` (absolute
    simulation time) and is zero outside them; ``fwhm`` is still used for
    default grid and guard choices.
    """

    shape: str = "gaussian"
    fwhm: float = 10e-6
    peak_amplitude: float = 1.0
    center_time: float = 30e-6
    two_photon_offset: float = 0.0
    sample_times: Optional[tuple] = None
    samples: Optional[tuple] = None

    def __post_init__(self):
        if self.shape not in PULSE_SHAPES:
            raise DomainError(f"shape must be one of {PULSE_SHAPES}, got {self.shape!r}")
        if not self.fwhm > 0:
            raise DomainError(f"fwhm must be > 0, got {self.fwhm}")
        if not math.isfinite(self.peak_amplitude):
            raise DomainError("peak_amplitude must be finite")
        if self.shape == "custom-sampled":
            if self.sample_times is None or self.samples is None:
                raise DomainError("custom-sampled pulse needs sample_times and samples")
            if len(self.sample_times) != len(self.samples) or len(self.samples) < 2:
                raise DomainError("sample_times and samples must have equal length >= 2")

    def amplitude(self, t):
        t = np.asarray(t, dtype=float)
        if self.shape == "gaussian":
            x = (t - self.center_time) / self.fwhm
            return self.peak_amplitude * np.exp(-2.0 * math.log(2.0) * x * x) + 0j
        ts = np.asarray(self.sample_times, dtype=float)
        vs = np.asarray(self.samples, dtype=complex) * self.peak_amplitude
        re = np.interp(t, ts, vs.real, left=0.0, right=0.0)
        im = np.interp(t, ts, vs.imag, left=0.0, right=0.0)
        return re + 1j * im


@dataclass(frozen=True)
class DecoherenceModel:
    """Phenomenological decay of the stored coherence.

    Rates are energy decay rates: with the exponential form the stored energy
    falls as ``exp(-rate * t)``.  The gaussian-quadrature form makes the energy
    fall as ``exp(-(rate * t)**2)`` with ``t`` measured from the pulse centre,
    which is what thermal motion of the atoms would produce.
    """

    storage_rate: float = 0.0
    write_read_rate: float = 0.0
    form: str = "exponential"

    def __post_init__(self):
        if not self.storage_rate >= 0:
            raise DomainError(f"storage_rate must be >= 0, got {self.storage_rate}")
        if not self.write_read_rate >= 0:
            raise DomainError(f"write_read_rate must be >= 0, got {self.write_read_rate}")
        if self.form not in DECOHERENCE_FORMS:
            raise DomainError(f"form must be one of {DECOHERENCE_FORMS}, got {self.form!r}")


@dataclass(frozen=True)
class SimulationGrid:
    n_z: int = 256
    dt: float = 5e-8
    t_end: float = 150e-6

    def __post_init__(self):
        if self.n_z < 16:
            raise DomainError(f"n_z must be >= 16, got {self.n_z}")
        if not self.dt > 0:
            raise DomainError(f"dt must be > 0, got {self.dt}")
        if not self.t_end > 0:
            raise DomainError(f"t_end must be > 0, got {self.t_end}")

    @staticmethod
    def max_dt(schedule: GradientSchedule, length: float) -> float:
        return 0.1 / (math.pi * schedule.max_abs_eta * length)

    @classmethod
    def default(
        cls,
        pulse: ProbePulse,
        schedule: GradientSchedule,
        ensemble: EnsembleProfile,
        n_z: int = 256,
    ) -> "SimulationGrid":
        dt = min(0.05 / (math.pi * schedule.max_abs_eta * ensemble.length), pulse.fwhm / 200)
        echo = schedule.predicted_echo_time()
        last = echo if echo is not None else schedule.switch_time
        t_end = pulse.center_time + last + 3 * pulse.fwhm
        return cls(n_z=n_z, dt=dt, t_end=t_end)

    def validate(self, schedule: GradientSchedule, length: float):
        limit = self.max_dt(schedule, length)
        if self.dt > limit * (1 + 1e-12):
            raise DomainError(
                f"dt={self.dt:.4g} s does not resolve the gradient phase; "
                f"need dt <= {limit:.4g} s"
            )


@dataclass(frozen=True)
class SimulationResult:
    times: np.ndarray
    probe_in: np.ndarray
    probe_out: np.ndarray
    z: np.ndarray
    spin_times: np.ndarray
    spin_field: np.ndarray
    input_energy: float
    leak_energy: float
    echo_energy: float
    residual_energy: float
    echo_peak_time: Optional[float]
    pulse_center: float
    switch_time: float
    dt: float
    write_exponent: float

    @property
    def echo_present(self) -> bool:
        return self.echo_peak_time is not None

    def write_window(self) -> np.ndarray:
        return self.times < self.pulse_center + self.switch_time

    def intensity_out(self) -> np.ndarray:
        return np.abs(self.probe_out) ** 2


def coupling_constant(
    ensemble: EnsembleProfile, line: TransitionLine, coupling: RamanCoupling
) -> float:
    """``kappa`` in 1/sqrt(m*s); zero when the coupling field is off."""
    if coupling.rabi_frequency == 0 or ensemble.effective_od == 0:
        return 0.0
    return math.sqrt(raman_area(ensemble, line, coupling) / ensemble.length)


def _storage_window(pulse: ProbePulse, schedule: GradientSchedule):
    """(start, end) of the storage window in absolute time, or None."""
    guard = 2 * pulse.fwhm if schedule.hold_guard is None else schedule.hold_guard
    echo = schedule.predicted_echo_time()
    if echo is None:
        start, end = pulse.center_time + guard, math.inf
    else:
        start, end = pulse.center_time + guard, pulse.center_time + echo - guard
    if end <= start:
        return None
    return start, end


def _trapz(y, dt):
    if len(y) < 2:
        return 0.0
    return float(dt * (y.sum() - 0.5 * (y[0] + y[-1])))


def run_storage_recall(
    ensemble: EnsembleProfile,
    line: TransitionLine,
    coupling: RamanCoupling,
    pulse: ProbePulse,
    schedule: GradientSchedule,
    decoherence: DecoherenceModel = DecoherenceModel(),
    grid: Optional[SimulationGrid] = None,
    record_points: int = 200,
    check_every: int = 200,
) -> SimulationResult:
    """Write, hold, reverse the gradient and read out one probe pulse.

    The simulation clock starts at 0; the pulse centre arrives at
    ``pulse.center_time`` and schedule times are relative to it.  The reported
    ``echo_peak_time`` is likewise measured from the pulse centre.

    Inside the storage window (from two pulse widths after the pulse centre to
    two pulse widths before the expected echo) the coherence decays at
    ``decoherence.storage_rate``; elsewhere at ``write_read_rate``.  With
    ``schedule.coupling_off_during_hold`` the coupling field is also off there.
    """
    if grid is None:
        grid = SimulationGrid.default(pulse, schedule, ensemble)
    grid.validate(schedule, ensemble.length)

    length = ensemble.length
    n_z, dt = grid.n_z, grid.dt
    dz = length / n_z
    z = (np.arange(n_z) + 0.5) * dz
    zrel = z - length / 2
    kappa = coupling_constant(ensemble, line, coupling)
    offset = pulse.two_photon_offset + coupling.two_photon_detuning
    tc = pulse.center_time

    n_steps = int(math.ceil(grid.t_end / dt - 1e-9))
    times = np.arange(n_steps + 1) * dt
    e_in = pulse.amplitude(times)
    e_half = pulse.amplitude(times[:-1] + dt / 2)

    window = _storage_window(pulse, schedule)
    if window is None:
        hold_lo = hold_hi = -1
    else:
        hold_lo = int(math.ceil(window[0] / dt - 1e-9))
        hold_hi = int(math.floor(window[1] / dt + 1e-9)) if math.isfinite(window[1]) else n_steps

    def gamma_amp(t, in_hold):
        if not in_hold:
            return 0.5 * decoherence.write_read_rate
        if decoherence.form == "exponential":
            return 0.5 * decoherence.storage_rate
        return decoherence.storage_rate ** 2 * max(t - tc, 0.0)

    two_pi = 2 * math.pi

    def deriv(t, s, e, kap, in_hold):
        eta = schedule.eta(t - tc)
        rate = gamma_amp(t, in_hold) + 1j * two_pi * (eta * zrel - offset)
        ds = -rate * s
        if kap:
            drive = e + 1j * kap * dz * (np.cumsum(s) - 0.5 * s)
            ds += 1j * kap * drive
        return ds

    s = np.zeros(n_z, dtype=complex)
    e_out = np.empty(n_steps + 1, dtype=complex)
    stride = max(1, n_steps // max(record_points, 1))
    spin_idx = list(range(0, n_steps + 1, stride))
    spin = np.empty((len(spin_idx), n_z), dtype=complex)
    rec = 0

    in_cum = out_cum = 0.0
    total_in = _trapz(np.abs(e_in) ** 2, dt)
    floor = 1e-9 * total_in + 1e-300

    for n in range(n_steps + 1):
        in_hold = hold_lo <= n < hold_hi
        kap = 0.0 if (in_hold and schedule.coupling_off_during_hold) else kappa
        e_out[n] = e_in[n] + 1j * kap * dz * s.sum()
        if rec < len(spin_idx) and spin_idx[rec] == n:
            spin[rec] = s
            rec += 1
        if n == n_steps:
            break
        if n:
            in_cum += 0.5 * dt * (abs(e_in[n - 1]) ** 2 + abs(e_in[n]) ** 2)
            out_cum += 0.5 * dt * (abs(e_out[n - 1]) ** 2 + abs(e_out[n]) ** 2)
            # output energy alone is cheap to watch every step; the stored
            # energy only every check_every steps
            grown = not out_cum <= 1.01 * in_cum + floor
            if grown or n % check_every == 0:
                stored = float(np.vdot(s, s).real) * dz
                if grown or not math.isfinite(stored) or stored + out_cum > 1.01 * in_cum + floor:
                    raise NumericalInstabilityError(
                        f"energy grew by more than 1% at t={times[n]:.4g} s; "
                        f"reduce dt (currently {dt:.4g} s)",
                        dt=dt,
                    )
        t = times[n]
        k1 = deriv(t, s, e_in[n], kap, in_hold)
        k2 = deriv(t + dt / 2, s + 0.5 * dt * k1, e_half[n], kap, in_hold)
        k3 = deriv(t + dt / 2, s + 0.5 * dt * k2, e_half[n], kap, in_hold)
        k4 = deriv(t + dt, s + dt * k3, e_in[n + 1], kap, in_hold)
        s = s + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)

    stored = float(np.vdot(s, s).real) * dz
    if not math.isfinite(stored) or not np.all(np.isfinite(e_out)):
        raise NumericalInstabilityError(f"non-finite field with dt={dt:.4g} s", dt=dt)

    i_in = np.abs(e_in) ** 2
    i_out = np.abs(e_out) ** 2
    split = min(int(math.ceil((tc + schedule.switch_time) / dt - 1e-9)), n_steps)
    input_energy = _trapz(i_in, dt)
    leak_energy = _trapz(i_out[: split + 1], dt)
    echo_energy = _trapz(i_out[split:], dt)
    if input_energy > 0 and leak_energy + echo_energy + stored > 1.01 * input_energy:
        raise NumericalInstabilityError(
            f"energy grew by more than 1% over the run; reduce dt (currently {dt:.4g} s)",
            dt=dt,
        )

    echo_peak = None
    if split < n_steps and input_energy > 0 and echo_energy > 1e-6 * input_energy:
        k = split + int(np.argmax(i_out[split:]))
        echo_peak = float(times[k] - tc)
        if split < k < n_steps:
            # vertex of the parabola through the three samples around the maximum
            y0, y1, y2 = i_out[k - 1 : k + 2]
            curv = y0 - 2 * y1 + y2
            if curv < 0:
                echo_peak += 0.5 * dt * (y0 - y2) / curv

    if schedule.eta_write and coupling.rabi_frequency and ensemble.effective_od:
        write_exponent = kappa ** 2 / abs(schedule.eta_write)
    else:
        write_exponent = 0.0

    spin = spin[:rec]
    for arr in (times, e_in, e_out, z, spin):
        arr.setflags(write=False)
    return SimulationResult(
        times=times,
        probe_in=e_in,
        probe_out=e_out,
        z=z,
        spin_times=times[spin_idx[:rec]],
        spin_field=spin,
        input_energy=input_energy,
        leak_energy=leak_energy,
        echo_energy=echo_energy,
        residual_energy=stored,
        echo_peak_time=echo_peak,
        pulse_center=tc,
        switch_time=schedule.switch_time,
        dt=dt,
        write_exponent=write_exponent,
    )


def leakage_fraction(result: SimulationResult) -> float:
    """Fraction of the input energy transmitted before the gradient reversal."""
    if not result.input_energy > 0:
        raise DomainError("input energy is zero")
    return result.leak_energy / result.input_energy


def echo_efficiency(result: SimulationResult) -> float:
    """Output energy after the gradient reversal over the input energy."""
    if not result.input_energy > 0:
        raise DomainError("input energy is zero")
    return result.echo_energy / result.input_energy


@dataclass(frozen=True)
class RamanScan:
    detuning: np.ndarray
    optical_depth: np.ndarray
    absorbed_fraction: np.ndarray
    eta: float

    @property
    def peak_od(self) -> float:
        return float(self.optical_depth.max())

    @property
    def peak_absorption(self) -> float:
        return float(self.absorbed_fraction.max())

    def fwhm(self, od: bool = False) -> float:
        """Full width at half maximum of the absorbed fraction (or of the OD)."""
        y = self.optical_depth if od else self.absorbed_fraction
        return _fwhm(self.detuning, y)


def _fwhm(x, y) -> float:
    k = int(np.argmax(y))
    half = y[k] / 2
    left = k
    while left > 0 and y[left] > half:
        left -= 1
    right = k
    while right < len(y) - 1 and y[right] > half:
        right += 1
    if y[left] > half or y[right] > half:
        return math.nan

    def cross(i, j):
        return x[i] + (half - y[i]) * (x[j] - x[i]) / (y[j] - y[i])

    return float(cross(right - 1, right) - cross(left, left + 1))


def raman_line_scan(
    ensemble: EnsembleProfile,
    line: TransitionLine,
    coupling: RamanCoupling,
    eta: float,
    scan_range: float,
    n_points: int = 401,
    linewidth: float = 1e3,
) -> RamanScan:
    """Steady-state weak-probe absorption against two-photon detuning.

    ``scan_range`` is the full span in Hz, centred on zero.  ``linewidth`` is
    the FWHM (Hz) of the unbroadened Raman line.  The z integral of the
    Lorentzian response across the gradient is done in closed form.
    """
    if n_points < 8:
        raise DomainError(f"n_points must be >= 8, got {n_points}")
    if not scan_range > 0:
        raise DomainError(f"scan_range must be > 0, got {scan_range}")
    if not linewidth > 0:
        raise DomainError(f"linewidth must be > 0, got {linewidth}")
    length = ensemble.length
    kappa2 = coupling_constant(ensemble, line, coupling) ** 2
    delta = np.linspace(-scan_range / 2, scan_range / 2, n_points)
    gam = math.pi * linewidth
    w = 2 * math.pi * delta
    if eta == 0:
        integral = length / (gam - 1j * w)
    else:
        a = 2 * math.pi * eta
        hi = gam + 1j * (a * length / 2 - w)
        lo = gam + 1j * (-a * length / 2 - w)
        integral = (np.log(hi) - np.log(lo)) / (1j * a)
    od = 2 * kappa2 * integral.real
    return RamanScan(
        detuning=delta,
        optical_depth=od,
        absorbed_fraction=-np.expm1(-od),
        eta=eta,
    )


@dataclass(frozen=True)
class SweepPoint:
    switch_time: float
    storage_time: float
    efficiency: float
    leakage: float


def sweep_storage_time(
    ensemble: EnsembleProfile,
    line: TransitionLine,
    coupling: RamanCoupling,
    pulse: ProbePulse,
    schedule: GradientSchedule,
    decoherence: DecoherenceModel,
    switch_times: Sequence[float],
    n_z: int = 256,
    threads: int = 1,
) -> list:
    """One storage/recall run per switch time with the coupling off during hold.

    Storage time is twice the switch time.  Runs are independent and may be
    spread over ``threads`` worker threads; output order follows input order.
    """

    def one(ts):
        sched = replace(schedule, switch_time=ts, coupling_off_during_hold=True)
        try:
            grid = SimulationGrid.default(pulse, sched, ensemble, n_z=n_z)
            res = run_storage_recall(ensemble, line, coupling, pulse, sched, decoherence, grid)
        except NumericalInstabilityError as exc:
            raise NumericalInstabilityError(f"switch_time={ts:.6g} s: {exc}", dt=exc.dt) from exc
        except DomainError as exc:
            raise DomainError(f"switch_time={ts:.6g} s: {exc}") from exc
        return SweepPoint(ts, 2 * ts, echo_efficiency(res), leakage_fraction(res))

    switch_times = list(switch_times)
    if threads > 1 and len(switch_times) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, switch_times))
    return [one(ts) for ts in switch_times]
