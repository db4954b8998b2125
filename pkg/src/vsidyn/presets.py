"""Reference parameter sets for the unstrained and strained centres."""
from __future__ import annotations

import numpy as np

from .dynamics import DriveState, ModelConfig, RateSet
from .spincore import StrainParams

RATES_NO_STRAIN = RateSet(
    gamma_r=56.39,
    gamma_1=83.11,
    gamma_1p=26.89,
    gamma_2=6.70,
    gamma_2p=27.33,
    gamma_3=3.81,
    gamma_4=0.24,
    gamma_3p0=0.00,
    gamma_4p0=0.04,
    beta=0.1358,
)

RATES_STRAIN = RateSet(
    gamma_r=56.36,
    gamma_1=84.15,
    gamma_1p=27.51,
    gamma_2=6.73,
    gamma_2p=27.63,
    gamma_3=1.11,
    gamma_4=0.09,
    gamma_3p0=0.00,
    gamma_4p0=0.02,
    beta=0.11,
)

STRAIN_TABLE1 = StrainParams(pi_z=1.51, pi_1=3.78, pi_2=3.68, theta=0.92 * np.pi)

#: Resonant Rabi frequency at 20 nW excitation power (MHz).
RABI_20NW = 4.33
#: Off-resonant pump strength used for the emission maps (MHz).
OFFRES_EMISSION_MAP = 1.0
#: Dark count rate of the detector (Hz).
DARK_COUNTS_HZ = 7.0
#: Detection efficiency at which 7 Hz dark counts pull the unstrained A1
#: visibility down to 0.953 (300 ns probes at 4.33 MHz).
VISIBILITY_EFFICIENCY = 9.6e-5

# 730 nm pump strength and MS2 deshelling rates while it is on (MHz).
PUMP_50UW = {
    "no_strain": DriveState(offres_pump=0.60, offres_gamma_3p=0.18, offres_gamma_4p=0.26),
    "strain": DriveState(offres_pump=0.92, offres_gamma_3p=0.17, offres_gamma_4p=0.49),
}
PUMP_815UW = {
    "no_strain": DriveState(offres_pump=13.95, offres_gamma_3p=0.25, offres_gamma_4p=0.33),
    "strain": DriveState(offres_pump=5.19, offres_gamma_3p=0.05, offres_gamma_4p=0.05),
}

RATE_PRESETS = {"table2_no_strain": RATES_NO_STRAIN, "table2_strain": RATES_STRAIN}
STRAIN_PRESETS = {"none": StrainParams(), "table1_strain": STRAIN_TABLE1}


def rabi_from_power(power_nw: float) -> float:
    """Rabi frequency for a resonant power, scaling Omega^2 linearly with power."""
    if power_nw < 0:
        raise ValueError("power must be >= 0")
    return RABI_20NW * np.sqrt(power_nw / 20.0)


def no_strain_model(**kw) -> ModelConfig:
    return ModelConfig.build(RATES_NO_STRAIN, None, **kw)


def strain_model(**kw) -> ModelConfig:
    return ModelConfig.build(RATES_STRAIN, STRAIN_TABLE1, **kw)
