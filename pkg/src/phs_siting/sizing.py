"""Engineering sizing: from capacity, head and duration to volume and flow.

Unit conventions: capacity in MW, head in m, duration in hours, volume in m^3,
flow in m^3/s. The specific energy constant couples them through
P = rho * g * eta * Q * head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

WATER_DENSITY = 1000.0  # kg/m^3
GRAVITY = 9.81  # m/s^2

#: Round-trip equipment efficiency that reproduces the reference storage
#: targets for the 500 MW study cases; override per project as needed.
DEFAULT_EFFICIENCY = 0.667

SECONDS_PER_HOUR = 3600.0


def _require_positive(**values: float) -> None:
    for name, value in values.items():
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")


def required_volume(
    power_mw: float, head_m: float, hours: float, efficiency: float = DEFAULT_EFFICIENCY
) -> float:
    """Minimum stored volume (m^3) to sustain ``power_mw`` for ``hours`` at ``head_m``.

    VolMin = (P * dt) / (rho * g * eta * head), all in SI.
    """
    _require_positive(power_mw=power_mw, head_m=head_m, hours=hours, efficiency=efficiency)
    if efficiency > 1:
        raise ValueError(f"efficiency must be <= 1, got {efficiency}")
    energy_j = power_mw * 1e6 * hours * SECONDS_PER_HOUR
    return energy_j / (WATER_DENSITY * GRAVITY * efficiency * head_m)


def design_flow(volume_m3: float, hours: float) -> float:
    """Flow (m^3/s) that drains ``volume_m3`` in ``hours``: Q = VolMin / dt."""
    _require_positive(volume_m3=volume_m3, hours=hours)
    return volume_m3 / (hours * SECONDS_PER_HOUR)


@dataclass(frozen=True)
class SitingSpec:
    """Resolved model parameters for one siting case.

    ``water_elevation`` is the absolute upper water level compared against
    cell elevations; ``head_m`` is the level difference driving the energy
    balance. Build instances with :meth:`from_engineering`.
    """

    power_mw: float
    head_m: float
    water_elevation: float
    hours: float
    efficiency: float
    energy_constant: float  # rho * g * eta, W*s/m^4
    vol_min: float  # m^3
    flow: float  # m^3/s

    def __post_init__(self):
        _require_positive(
            power_mw=self.power_mw,
            head_m=self.head_m,
            hours=self.hours,
            efficiency=self.efficiency,
            vol_min=self.vol_min,
            flow=self.flow,
        )
        if self.efficiency > 1:
            raise ValueError(f"efficiency must be <= 1, got {self.efficiency}")
        # Energy balance VolMin * head * k = P * dt and Q = VolMin / dt must hold.
        energy = self.vol_min * self.head_m * self.energy_constant
        target = self.power_mw * 1e6 * self.hours * SECONDS_PER_HOUR
        if not math.isclose(energy, target, rel_tol=1e-9):
            raise ValueError("vol_min, head and energy_constant violate the energy balance")
        if not math.isclose(self.flow, self.vol_min / (self.hours * SECONDS_PER_HOUR), rel_tol=1e-9):
            raise ValueError("flow is inconsistent with vol_min / duration")

    @classmethod
    def from_engineering(
        cls,
        power_mw: float,
        head_m: float,
        hours: float,
        lower_elevation: float,
        efficiency: float = DEFAULT_EFFICIENCY,
    ) -> "SitingSpec":
        vol_min = required_volume(power_mw, head_m, hours, efficiency)
        return cls(
            power_mw=power_mw,
            head_m=head_m,
            water_elevation=lower_elevation + head_m,
            hours=hours,
            efficiency=efficiency,
            energy_constant=WATER_DENSITY * GRAVITY * efficiency,
            vol_min=vol_min,
            flow=design_flow(vol_min, hours),
        )
