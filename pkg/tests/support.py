"""Shared builders for the test suite."""

import math

import numpy as np

from gemsim.model import (
    EnsembleProfile,
    GradientSchedule,
    RamanCoupling,
    TransitionLine,
    gradient_for_bandwidth,
)
from gemsim.solver import ProbePulse

LENGTH = 5e-3
# wide enough that a 10 us pulse sits well inside the memory band
BANDWIDTH = 200e3


def rabi_for_exponent(x, ensemble, line, bandwidth, detuning=-250e6):
    """Coupling Rabi frequency giving a Raman exponent ``x`` at ``bandwidth``."""
    return abs(detuning) * math.sqrt(
        x * bandwidth / (2 * math.pi * ensemble.effective_od * line.gamma)
    )


def memory(
    x,
    bandwidth=BANDWIDTH,
    switch_time=30e-6,
    read_bandwidth=None,
    od=300.0,
    detuning=-250e6,
    pulse=None,
    **schedule,
):
    """(ensemble, line, coupling, pulse, schedule) with write exponent ``x``."""
    ens = EnsembleProfile(od_resonant=od, length=LENGTH)
    line = TransitionLine()
    omega = rabi_for_exponent(x, ens, line, bandwidth, detuning)
    coupling = RamanCoupling(rabi_frequency=omega, one_photon_detuning=detuning)
    eta_w = gradient_for_bandwidth(bandwidth, LENGTH)
    eta_r = gradient_for_bandwidth(read_bandwidth or bandwidth, LENGTH)
    sched = GradientSchedule(
        eta_write=eta_w, eta_read=-eta_r, switch_time=switch_time, **schedule
    )
    return ens, line, coupling, pulse or ProbePulse(), sched


def gaussian_envelope(t, center, fwhm):
    """Intensity-FWHM Gaussian field amplitude."""
    x = (np.asarray(t) - center) / fwhm
    return np.exp(-2 * math.log(2) * x * x)


def heterodyne(envelope, times, f_if, phase=0.0):
    return envelope * np.cos(2 * math.pi * f_if * times + phase)
