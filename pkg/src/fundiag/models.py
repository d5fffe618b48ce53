"""Flux functions for the classic flow-density fundamental diagram models.

Seven functional forms are supported, each mapping traffic density
(veh/km) to flow (veh/h):

- Greenshields: ``q = rho * v_free * (1 - rho / rho_max)``
- Greenberg: ``q = rho * v_capacity * ln(rho_max / rho)``
- Northwestern: ``q = rho * v_free * exp(-0.5 * (rho / rho_crit)^2)``
- Newell: ``q = rho * v_free * (1 - exp(-(c1 / v_free) * (1/rho - 1/rho_max)))``
- Logistic: ``q = rho * v_free / (1 + exp((rho - rho_crit) / c2))``
- Daganzo-Newell (triangular): linear up to ``rho_crit`` with peak
  ``max_flow``, linear back down to zero at ``rho_max``
- Continuous triangle: smooth concave triangle
  ``q = alpha * (a + (b - a) * rho/rho_max - sqrt(1 + y^2))`` with
  ``a = sqrt(1 + (lambda p)^2)``, ``b = sqrt(1 + (lambda (1-p))^2)``,
  ``y = lambda * (rho/rho_max - p)``

All evaluations are defined at ``rho = 0`` (value 0, by continuous limit
for Greenberg and Newell).  Daganzo-Newell, Greenshields and Newell clamp
to zero beyond ``rho_max`` instead of extrapolating negative flow, so
residuals stay finite while parameter boxes are explored during fitting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import expit


class FdModelKind(Enum):
    """The supported fundamental-diagram functional forms."""

    GREENSHIELDS = "greenshields"
    GREENBERG = "greenberg"
    NORTHWESTERN = "northwestern"
    NEWELL = "newell"
    LOGISTIC = "logistic"
    DAGANZO_NEWELL = "daganzo_newell"
    CONTINUOUS_TRIANGLE = "continuous_triangle"


#: Canonical parameter names, in fitting order, per model kind.
PARAM_NAMES: dict[FdModelKind, tuple[str, ...]] = {
    FdModelKind.GREENSHIELDS: ("v_free", "rho_max"),
    FdModelKind.GREENBERG: ("v_capacity", "rho_max"),
    FdModelKind.NORTHWESTERN: ("v_free", "rho_crit"),
    FdModelKind.NEWELL: ("v_free", "rho_max", "c1"),
    FdModelKind.LOGISTIC: ("v_free", "rho_crit", "c2"),
    FdModelKind.DAGANZO_NEWELL: ("max_flow", "rho_crit", "rho_max"),
    FdModelKind.CONTINUOUS_TRIANGLE: ("alpha", "lambda", "p", "rho_max"),
}


@dataclass(frozen=True)
class FdModelParams:
    """A parameter set for one model kind, keyed by canonical names."""

    kind: FdModelKind
    values: dict[str, float]

    def __post_init__(self) -> None:
        expected = PARAM_NAMES[self.kind]
        got = tuple(sorted(self.values))
        if got != tuple(sorted(expected)):
            raise ValueError(
                f"{self.kind.value} expects parameters {expected}, got {got}"
            )

    def as_array(self) -> np.ndarray:
        """Parameter values in canonical order."""
        return np.array([self.values[n] for n in PARAM_NAMES[self.kind]], dtype=float)

    @classmethod
    def from_array(cls, kind: FdModelKind, theta) -> "FdModelParams":
        names = PARAM_NAMES[kind]
        if len(theta) != len(names):
            raise ValueError(f"{kind.value} expects {len(names)} parameters")
        return cls(kind, {n: float(v) for n, v in zip(names, theta)})

    def to_json_dict(self) -> dict:
        out: dict = {"model": self.kind.value}
        out.update({n: self.values[n] for n in PARAM_NAMES[self.kind]})
        return out

    @classmethod
    def from_json_dict(cls, obj: dict) -> "FdModelParams":
        kind = FdModelKind(obj["model"])
        return cls(kind, {n: float(obj[n]) for n in PARAM_NAMES[kind]})


def n_params(kind: FdModelKind) -> int:
    return len(PARAM_NAMES[kind])


def validate(params: FdModelParams) -> list[str]:
    """Check parameter invariants; returns the violated ones by name.

    An empty list means the parameter set is valid.  Diagnostic return,
    never raises.
    """
    v = params.values
    violations = []
    for name, x in v.items():
        if not math.isfinite(x):
            violations.append(f"{name} finite")
    positive = {"v_free", "v_capacity", "max_flow", "rho_max", "rho_crit",
                "c1", "c2", "alpha", "lambda"}
    for name in PARAM_NAMES[params.kind]:
        if name in positive and not (math.isfinite(v[name]) and v[name] > 0):
            violations.append(f"{name} > 0")
    if "p" in v and not (0.0 < v["p"] < 1.0):
        violations.append("0 < p < 1")
    if "rho_crit" in v and "rho_max" in v and not (v["rho_crit"] < v["rho_max"]):
        violations.append("rho_crit < rho_max")
    return violations


def _flux_greenshields(v: dict, rho: np.ndarray) -> np.ndarray:
    out = rho * v["v_free"] * (1.0 - rho / v["rho_max"])
    return np.where(rho > v["rho_max"], 0.0, out)


def _flux_greenberg(v: dict, rho: np.ndarray) -> np.ndarray:
    out = np.zeros_like(rho)
    pos = rho > 0
    out[pos] = rho[pos] * v["v_capacity"] * np.log(v["rho_max"] / rho[pos])
    return out


def _flux_northwestern(v: dict, rho: np.ndarray) -> np.ndarray:
    z = rho / v["rho_crit"]
    return rho * v["v_free"] * np.exp(-0.5 * z * z)


def _flux_newell(v: dict, rho: np.ndarray) -> np.ndarray:
    vf, m, c1 = v["v_free"], v["rho_max"], v["c1"]
    out = np.zeros_like(rho)
    mid = (rho > 0) & (rho <= m)
    r = rho[mid]
    out[mid] = r * vf * (1.0 - np.exp(-(c1 / vf) * (1.0 / r - 1.0 / m)))
    return out


def _flux_logistic(v: dict, rho: np.ndarray) -> np.ndarray:
    # expit keeps the tail stable where exp((rho - rho_crit)/c2) overflows
    return rho * v["v_free"] * expit((v["rho_crit"] - rho) / v["c2"])


def _flux_daganzo_newell(v: dict, rho: np.ndarray) -> np.ndarray:
    q, c, m = v["max_flow"], v["rho_crit"], v["rho_max"]
    out = np.zeros_like(rho)
    up = rho <= c
    out[up] = q * rho[up] / c
    down = (~up) & (rho <= m)
    if np.any(down):
        out[down] = q * (m - rho[down]) / (m - c)
    return out


def _flux_continuous_triangle(v: dict, rho: np.ndarray) -> np.ndarray:
    alpha, lam, p, m = v["alpha"], v["lambda"], v["p"], v["rho_max"]
    a = math.sqrt(1.0 + (lam * p) ** 2)
    b = math.sqrt(1.0 + (lam * (1.0 - p)) ** 2)
    y = lam * (rho / m - p)
    return alpha * (a + (b - a) * rho / m - np.sqrt(1.0 + y * y))


_FLUX = {
    FdModelKind.GREENSHIELDS: _flux_greenshields,
    FdModelKind.GREENBERG: _flux_greenberg,
    FdModelKind.NORTHWESTERN: _flux_northwestern,
    FdModelKind.NEWELL: _flux_newell,
    FdModelKind.LOGISTIC: _flux_logistic,
    FdModelKind.DAGANZO_NEWELL: _flux_daganzo_newell,
    FdModelKind.CONTINUOUS_TRIANGLE: _flux_continuous_triangle,
}


def flux(params: FdModelParams, rho):
    """Evaluate the model's flux at density ``rho`` (scalar or array).

    ``rho`` must be non-negative; parameters are assumed valid (see
    :func:`validate`).  Returns flow in veh/h, matching the input shape.
    """
    arr = np.asarray(rho, dtype=float)
    if np.any(arr < 0):
        raise ValueError("density must be non-negative")
    out = _FLUX[params.kind](params.values, np.atleast_1d(arr))
    if arr.ndim == 0:
        return float(out[0])
    return out


@dataclass(frozen=True)
class DataSummary:
    """Observed maxima used to construct realistic fitting boxes."""

    max_flow_obs: float
    max_density_obs: float
    max_speed_obs: float

    def __post_init__(self) -> None:
        if not (self.max_flow_obs > 0 and self.max_density_obs > 0
                and self.max_speed_obs > 0):
            raise ValueError("data summary values must be positive")

    @classmethod
    def from_arrays(cls, density, flow) -> "DataSummary":
        density = np.asarray(density, dtype=float)
        flow = np.asarray(flow, dtype=float)
        pos = density > 0
        if not np.any(pos):
            raise ValueError("no positive densities in data")
        return cls(
            max_flow_obs=float(np.max(flow)),
            max_density_obs=float(np.max(density)),
            max_speed_obs=float(np.max(flow[pos] / density[pos])),
        )


# Fraction of the upper bound used as the strictly positive lower edge.
_LOW_FRAC = 1e-6


def default_bounds(kind: FdModelKind, summary: DataSummary) -> dict[str, tuple[float, float]]:
    """Finite per-parameter [low, high] boxes anchored to observed maxima.

    Rules: ``rho_max`` in [max_density_obs, 5 * max_density_obs],
    speeds in (0, 1.5 * max_speed_obs], ``max_flow`` in
    (0, 1.5 * max_flow_obs], ``rho_crit`` in (0, max_density_obs].
    Every box contains valid parameter sets in its interior.
    """
    q, d, s = summary.max_flow_obs, summary.max_density_obs, summary.max_speed_obs
    high = {
        "v_free": 1.5 * s,
        "v_capacity": 1.5 * s,
        "max_flow": 1.5 * q,
        "rho_max": 5.0 * d,
        "rho_crit": d,
        "c1": 10.0 * q,
        "c2": d,
        "alpha": 10.0 * q,
        "lambda": 100.0,
    }
    box = {}
    for name in PARAM_NAMES[kind]:
        if name == "p":
            box[name] = (1e-3, 1.0 - 1e-3)
        elif name == "rho_max":
            box[name] = (d, 5.0 * d)
        else:
            box[name] = (_LOW_FRAC * high[name], high[name])
    return box
