"""Domain types and closed-form formulas for a Raman gradient echo memory.

All frequencies are ordinary frequencies in Hz (not angular).  Gradients are
in Hz per metre, so the memory bandwidth is ``|eta| * length`` in Hz.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Optional

from scipy.optimize import brentq

from gemsim.errors import DomainError

BOLTZMANN = 1.380649e-23  # J/K, exact
RB87_MASS = 1.443160648e-25  # kg
RB_LINEWIDTH = 6.0e6  # Hz


@dataclass(frozen=True)
class EnsembleProfile:
    """Storage medium as seen by the memory.

    ``od_resonant`` is the peak resonant optical depth of the whole cloud; only
    ``mf_usable_fraction`` of the atoms take part in the memory transition, so
    the memory formulas use :attr:`effective_od`.
    """

    od_resonant: float = 300.0
    length: float = 5e-3
    sigma_x: float = 0.5e-3
    sigma_y: float = 0.5e-3
    sigma_z: float = 1.25e-3
    temperature: float = 200e-6
    atom_number: float = 4e9
    atomic_mass: float = RB87_MASS
    mf_usable_fraction: float = 0.5

    def __post_init__(self):
        if not self.od_resonant >= 0:
            raise DomainError(f"od_resonant must be >= 0, got {self.od_resonant}")
        if not self.length > 0:
            raise DomainError(f"length must be > 0, got {self.length}")
        for name in ("sigma_x", "sigma_y", "sigma_z"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be > 0, got {getattr(self, name)}")
        if not self.temperature >= 0:
            raise DomainError(f"temperature must be >= 0, got {self.temperature}")
        if not self.atomic_mass > 0:
            raise DomainError(f"atomic_mass must be > 0, got {self.atomic_mass}")
        if not 0.0 <= self.mf_usable_fraction <= 1.0:
            raise DomainError(
                f"mf_usable_fraction must lie in [0, 1], got {self.mf_usable_fraction}"
            )

    @property
    def effective_od(self) -> float:
        return self.od_resonant * self.mf_usable_fraction


@dataclass(frozen=True)
class TransitionLine:
    gamma: float = RB_LINEWIDTH
    center_offset: float = 0.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise DomainError(f"gamma must be > 0, got {self.gamma}")


@dataclass(frozen=True)
class RamanCoupling:
    rabi_frequency: float = 2e6
    one_photon_detuning: float = -250e6
    two_photon_detuning: float = 0.0

    def __post_init__(self):
        if not self.rabi_frequency >= 0:
            raise DomainError(f"rabi_frequency must be >= 0, got {self.rabi_frequency}")


SETTLE_MODELS = ("linear", "exponential")


@dataclass(frozen=True)
class GradientSchedule:
    """Piecewise gradient with a single reversal.

    Times are measured from the arrival of the pulse centre.  With the linear
    settle model the ramp from ``eta_write`` to ``eta_read`` is centred on
    ``switch_time``; the exponential model starts relaxing at ``switch_time``
    and reaches ``settle_tolerance`` of the step after ``settle_duration``.

    When ``coupling_off_during_hold`` is set, the coupling field is gated off
    between ``hold_guard`` after the pulse centre and ``hold_guard`` before the
    expected echo.  ``hold_guard=None`` means two pulse widths.
    """

    eta_write: float = 1e7
    eta_read: float = -1e7
    switch_time: float = 30e-6
    settle_duration: float = 1.5e-6
    settle_tolerance: float = 0.01
    settle_model: str = "linear"
    coupling_off_during_hold: bool = False
    hold_guard: Optional[float] = None

    def __post_init__(self):
        if self.eta_write == 0:
            raise DomainError("eta_write must be nonzero")
        if self.eta_read == 0:
            raise DomainError("eta_read must be nonzero")
        if not self.settle_duration >= 0:
            raise DomainError(f"settle_duration must be >= 0, got {self.settle_duration}")
        if not 0 < self.settle_tolerance < 1:
            raise DomainError(
                f"settle_tolerance must lie in (0, 1), got {self.settle_tolerance}"
            )
        if self.settle_model not in SETTLE_MODELS:
            raise DomainError(
                f"settle_model must be one of {SETTLE_MODELS}, got {self.settle_model!r}"
            )
        if self.hold_guard is not None and not self.hold_guard >= 0:
            raise DomainError(f"hold_guard must be >= 0, got {self.hold_guard}")

    @property
    def recalls(self) -> bool:
        """True when the read gradient opposes the write gradient."""
        return (self.eta_write > 0) != (self.eta_read > 0)

    def validate_recall(self):
        if not self.recalls:
            raise DomainError(
                "eta_read must have the opposite sign to eta_write for recall "
                f"(eta_write={self.eta_write}, eta_read={self.eta_read})"
            )

    @property
    def max_abs_eta(self) -> float:
        return max(abs(self.eta_write), abs(self.eta_read))

    def _tau_settle(self) -> float:
        return self.settle_duration / math.log(1.0 / self.settle_tolerance)

    def eta(self, t: float) -> float:
        """Gradient at time ``t`` after the pulse centre."""
        ts, d = self.switch_time, self.settle_duration
        if self.settle_model == "linear":
            if t <= ts - d / 2:
                return self.eta_write
            if t >= ts + d / 2:
                return self.eta_read
            frac = (t - (ts - d / 2)) / d
            return self.eta_write + frac * (self.eta_read - self.eta_write)
        if t <= ts:
            return self.eta_write
        if d == 0:
            return self.eta_read
        return self.eta_read + (self.eta_write - self.eta_read) * math.exp(
            -(t - ts) / self._tau_settle()
        )

    def eta_area(self, t: float) -> float:
        """Integral of the gradient from the pulse centre (t=0) to ``t``."""
        ts, d = self.switch_time, self.settle_duration
        ew, er = self.eta_write, self.eta_read
        if self.settle_model == "linear":
            t0, t1 = ts - d / 2, ts + d / 2
            if t <= t0:
                return ew * t
            if t <= t1:
                u = t - t0
                return ew * t0 + ew * u + (er - ew) * u * u / (2 * d)
            return ew * t0 + (ew + er) * d / 2 + er * (t - t1)
        if t <= ts or d == 0:
            return ew * min(t, ts) + (er * (t - ts) if t > ts else 0.0)
        tau = self._tau_settle()
        u = t - ts
        return ew * ts + er * u + (ew - er) * tau * (1 - math.exp(-u / tau))

    def predicted_echo_time(self) -> Optional[float]:
        """Time after the pulse centre at which the gradient area returns to zero.

        ``None`` when the read gradient does not reverse the write gradient.
        """
        if not self.recalls:
            return None
        hi = self.switch_time + self.settle_duration
        while self.eta_area(hi) * self.eta_write > 0:
            hi = 2 * hi + 1e-9
        return brentq(self.eta_area, self.switch_time, hi, xtol=1e-15, rtol=1e-13)


@dataclass(frozen=True)
class EfficiencyReport:
    storage_efficiency: float
    recall_efficiency: float
    total_efficiency: float
    leakage_fraction: float
    delay_bandwidth_product: float

    def __post_init__(self):
        for name in (
            "storage_efficiency",
            "recall_efficiency",
            "total_efficiency",
            "leakage_fraction",
        ):
            value = getattr(self, name)
            if not -1e-9 <= value <= 1 + 1e-9:
                raise DomainError(f"{name} must lie in [0, 1], got {value}")
        if not self.delay_bandwidth_product >= 0:
            raise DomainError(
                f"delay_bandwidth_product must be >= 0, got {self.delay_bandwidth_product}"
            )
        if self.total_efficiency > self.storage_efficiency + 1e-9:
            raise DomainError("total_efficiency cannot exceed storage_efficiency")

    def to_dict(self) -> dict:
        return asdict(self)


def beer_lambert_od(i_transmitted: float, i_reference: float) -> float:
    """Optical depth ``ln(I_reference / I_transmitted)``.

    Absorption gives a positive value; a transmitted intensity above the
    reference (gain or noise) gives a negative one, which is returned as is.
    """
    if not i_transmitted > 0:
        raise DomainError(f"i_transmitted must be > 0, got {i_transmitted}")
    if not i_reference > 0:
        raise DomainError(f"i_reference must be > 0, got {i_reference}")
    return math.log(i_reference / i_transmitted)


def resonance_scale_factor(delta: float, gamma: float) -> float:
    """Ratio of resonant to off-resonant optical depth at detuning ``delta``."""
    if not gamma > 0:
        raise DomainError(f"gamma must be > 0, got {gamma}")
    quarter = gamma * gamma / 4.0
    return (delta * delta + quarter) / quarter


def memory_bandwidth(eta: float, length: float) -> float:
    if not length > 0:
        raise DomainError(f"length must be > 0, got {length}")
    return abs(eta) * length


def gradient_for_bandwidth(bandwidth: float, length: float) -> float:
    """Inverse of :func:`memory_bandwidth` (magnitude only)."""
    if not length > 0:
        raise DomainError(f"length must be > 0, got {length}")
    if not bandwidth >= 0:
        raise DomainError(f"bandwidth must be >= 0, got {bandwidth}")
    return bandwidth / length


def _check_raman(coupling: RamanCoupling):
    delta = coupling.one_photon_detuning
    if delta == 0:
        raise DomainError("one_photon_detuning must be nonzero for the Raman formulas")
    ratio = coupling.rabi_frequency / abs(delta)
    if ratio > 0.1:
        warnings.warn(
            f"rabi_frequency/|one_photon_detuning| = {ratio:.3g} > 0.1; "
            "the far-detuned Raman approximation is poor",
            stacklevel=3,
        )


def raman_area(ensemble: EnsembleProfile, line: TransitionLine, coupling: RamanCoupling) -> float:
    """Frequency-integrated Raman optical depth, in Hz.

    Spreading this area evenly over a bandwidth ``B`` gives the Raman exponent
    ``raman_area / B``; it is independent of the gradient.
    """
    _check_raman(coupling)
    omega, delta = coupling.rabi_frequency, coupling.one_photon_detuning
    return 2 * math.pi * ensemble.effective_od * line.gamma * (omega * omega) / (delta * delta)


def raman_exponent(
    ensemble: EnsembleProfile,
    line: TransitionLine,
    coupling: RamanCoupling,
    bandwidth: float,
) -> float:
    """Effective Raman optical depth of the broadened line.

    ``2*pi * (OD / (B/gamma)) * (Omega_c/Delta)**2`` with ``OD`` the usable
    resonant optical depth.  The single-pass intensity transmission inside the
    memory band is ``exp(-exponent)``.
    """
    if not bandwidth > 0:
        raise DomainError(f"bandwidth must be > 0, got {bandwidth}")
    _check_raman(coupling)
    omega, delta = coupling.rabi_frequency, coupling.one_photon_detuning
    b_norm = bandwidth / line.gamma
    return 2 * math.pi * (ensemble.effective_od / b_norm) * (omega * omega) / (delta * delta)


def storage_efficiency(exponent: float) -> float:
    if not exponent >= 0:
        raise DomainError(f"exponent must be >= 0, got {exponent}")
    return -math.expm1(-exponent)


def total_efficiency_estimate(
    eps_write: float, eps_read: float, tau: float, storage_time: float
) -> float:
    """Write efficiency times read efficiency times exponential decay."""
    for name, value in (("eps_write", eps_write), ("eps_read", eps_read)):
        if not 0.0 <= value <= 1.0:
            raise DomainError(f"{name} must lie in [0, 1], got {value}")
    if not tau > 0:
        raise DomainError(f"tau must be > 0, got {tau}")
    if not storage_time >= 0:
        raise DomainError(f"storage_time must be >= 0, got {storage_time}")
    return eps_write * eps_read * math.exp(-storage_time / tau)


def delay_bandwidth_product(tau: float, bandwidth: float) -> float:
    if not tau >= 0:
        raise DomainError(f"tau must be >= 0, got {tau}")
    if not bandwidth >= 0:
        raise DomainError(f"bandwidth must be >= 0, got {bandwidth}")
    return tau * bandwidth


def efficiency_report(
    ensemble: EnsembleProfile,
    line: TransitionLine,
    coupling: RamanCoupling,
    write_bandwidth: float,
    tau: float,
    storage_time: float,
    read_bandwidth: Optional[float] = None,
) -> EfficiencyReport:
    """Analytic efficiency budget.

    The write stage uses the write bandwidth and the read stage the read
    bandwidth (the write bandwidth again when ``read_bandwidth`` is None).
    """
    eps_w = storage_efficiency(raman_exponent(ensemble, line, coupling, write_bandwidth))
    read_bw = write_bandwidth if read_bandwidth is None else read_bandwidth
    eps_r = storage_efficiency(raman_exponent(ensemble, line, coupling, read_bw))
    return EfficiencyReport(
        storage_efficiency=eps_w,
        recall_efficiency=eps_r,
        total_efficiency=total_efficiency_estimate(eps_w, eps_r, tau, storage_time),
        leakage_fraction=1.0 - eps_w,
        delay_bandwidth_product=delay_bandwidth_product(tau, write_bandwidth),
    )
