"""Vehicle emission rates from HBEFA3-style speed/acceleration polynomials.

Each pollutant's instantaneous rate is a degree-3 polynomial in speed with
two acceleration cross terms, divided by a fixed scaling factor and clamped
at zero:

    e = max((f1 + f2*a*v + f3*a^2*v + f4*v + f5*v^2 + f6*v^3) / s, 0)

Speeds are m/s, accelerations m/s^2. With the bundled PC_G_EU4 table the
clamped result is ml/s for fuel and mg/s for the mass pollutants; the data
file documents the unit conversion baked into its coefficients.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

#: Canonical pollutant order used in every report.
POLLUTANTS: tuple[str, ...] = ("fuel", "co2", "co", "hc", "nox")

DEFAULT_CLASS = "PC_G_EU4"
DEFAULT_SCALE = 2671.2


class EmissionDataError(ValueError):
    """Malformed or incomplete coefficient table."""


@dataclass(frozen=True)
class EmissionCoefficients:
    """Per-pollutant polynomial constants for one emission class."""

    emission_class: str
    table: dict[str, tuple[float, float, float, float, float, float]]
    scale: float

    def __post_init__(self) -> None:
        missing = [p for p in POLLUTANTS if p not in self.table]
        if missing:
            raise EmissionDataError(
                f"class {self.emission_class}: missing pollutants {missing}"
            )

    def coeffs(self, pollutant: str) -> tuple[float, ...]:
        try:
            return self.table[pollutant]
        except KeyError:
            raise EmissionDataError(f"unknown pollutant {pollutant!r}") from None


def emission_rate(coeffs: EmissionCoefficients, pollutant: str, v, a):
    """Instantaneous emission rate at speed v (m/s), acceleration a (m/s^2).

    Accepts scalars or numpy arrays; the polynomial is evaluated exactly as
    written above (no factoring), then scaled and clamped at zero.
    """
    f1, f2, f3, f4, f5, f6 = coeffs.coeffs(pollutant)
    v = np.asarray(v, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    poly = f1 + f2 * a * v + f3 * a * a * v + f4 * v + f5 * v * v + f6 * v * v * v
    out = np.maximum(poly / coeffs.scale, 0.0)
    if out.ndim == 0:
        return float(out)
    return out


def sample_world(world, coeffs: EmissionCoefficients) -> dict[str, "np.ndarray"]:
    """Per-pollutant rate arrays for every active vehicle in the world.

    Uses each vehicle's current speed and effective acceleration. Arrays are
    aligned with ``world.active_indices()``; an empty world yields empty
    arrays.
    """
    v, a = world.speed_accel_arrays()
    return {p: emission_rate(coeffs, p, v, a) for p in POLLUTANTS}


def aggregate(samples: dict[str, np.ndarray], scope_mask: np.ndarray) -> dict[str, float | None]:
    """Mean per-vehicle rate over the vehicles selected by scope_mask.

    An empty scope yields None for every pollutant - absent, never zero.
    """
    n = int(scope_mask.sum())
    if n == 0:
        return {p: None for p in POLLUTANTS}
    return {p: float(samples[p][scope_mask].mean()) for p in POLLUTANTS}


def _parse_table(text: str, origin: str) -> list[dict[str, str]]:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.DictReader(io.StringIO("\n".join(lines)))
    required = {"class", "pollutant", "f1", "f2", "f3", "f4", "f5", "f6", "scale"}
    if reader.fieldnames is None or not required.issubset(reader.fieldnames):
        raise EmissionDataError(f"{origin}: header must contain {sorted(required)}")
    return list(reader)


def load_coefficients(path: str | Path | None = None, emission_class: str = DEFAULT_CLASS) -> EmissionCoefficients:
    """Load one emission class from a coefficient CSV.

    With no path, the bundled PC_G_EU4 table is used. The default class is
    validated to carry all five pollutants and the exact scale 2671.2.
    """
    if path is None:
        text = resources.files("mixsim").joinpath("data/hbefa3_pc_g_eu4.csv").read_text()
        origin = "hbefa3_pc_g_eu4.csv"
    else:
        text = Path(path).read_text()
        origin = str(path)

    rows = [r for r in _parse_table(text, origin) if r["class"] == emission_class]
    if not rows:
        raise EmissionDataError(f"{origin}: no rows for class {emission_class!r}")

    table: dict[str, tuple[float, ...]] = {}
    scales = set()
    for r in rows:
        try:
            fs = tuple(float(r[f"f{i}"]) for i in range(1, 7))
            scale = float(r["scale"])
        except (ValueError, KeyError) as exc:
            raise EmissionDataError(f"{origin}: bad row for {r.get('pollutant')}") from exc
        pollutant = r["pollutant"].strip().lower()
        if pollutant in table:
            raise EmissionDataError(f"{origin}: duplicate pollutant {pollutant!r}")
        table[pollutant] = fs
        scales.add(scale)

    if len(scales) != 1:
        raise EmissionDataError(f"{origin}: class {emission_class}: mixed scale values {sorted(scales)}")
    scale = scales.pop()
    if emission_class == DEFAULT_CLASS and scale != DEFAULT_SCALE:
        raise EmissionDataError(
            f"{origin}: class {DEFAULT_CLASS} must use scale {DEFAULT_SCALE}, got {scale}"
        )
    return EmissionCoefficients(emission_class=emission_class, table=table, scale=scale)
