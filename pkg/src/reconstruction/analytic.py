"""
Average MSE of Reconstruction
Closed forms for no inference, synchronous inference and asynchronous inference,
the MSSC approximations, and the upper/lower bounds along the BLEP and spatial axes
"""

import logging
import math
from dataclasses import dataclass, field as dc_field, replace
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from .errors import InvalidConfigError
from .field import mssc as field_mssc
from .spt import blep_average, blep_average_simplified

logger = logging.getLogger(__name__)

# Slack on the feasible time-shift band, in seconds
SHIFT_TOLERANCE = 1e-12


class Scheme(str, Enum):
    NO_INFER = "no-infer"
    SYN_INFER = "syn-infer"
    ASYN_INFER = "asyn-infer"


class BoundAxis(str, Enum):
    BLEP = "blep"
    SPATIAL = "spatial"


@dataclass(frozen=True)
class SchemeConfig:
    """
    Transmission scheme and timing.

    Attributes:
        scheme: no-infer, syn-infer or asyn-infer
        period_s: Transmission period T (s)
        shift_s: Time shift h between consecutive sensors (s), asyn-infer only
        sensors: Sensor count M
        target: 1-based id of the reconstructed sensor
    """
    scheme: Scheme = Scheme.SYN_INFER
    period_s: float = 0.15
    shift_s: Optional[float] = None
    sensors: int = 5
    target: int = 1

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not (math.isfinite(self.period_s) and self.period_s > 0):
            raise InvalidConfigError(f"period_s must be positive, got {self.period_s}")
        if self.sensors < 1:
            raise InvalidConfigError(f"need at least one sensor, got {self.sensors}")
        if not 1 <= self.target <= self.sensors:
            raise InvalidConfigError(f"target {self.target} outside [1, {self.sensors}]")
        if self.scheme is Scheme.ASYN_INFER:
            if self.sensors < 2:
                raise InvalidConfigError("asyn-infer needs at least two sensors")
            if self.shift_s is None or not self.shift_s > 0:
                raise InvalidConfigError(f"asyn-infer needs a positive shift_s, got {self.shift_s}")

    @property
    def effective_sensors(self):
        """No inference behaves as a single-sensor system"""
        return 1 if self.scheme is Scheme.NO_INFER else self.sensors

    def shift_band(self, link):
        """Feasible time shifts [T_s, (T - tau)/(M - 1)]"""
        return link.symbol_s, (self.period_s - link.delay_s) / (self.sensors - 1)

    def validate(self, link):
        """Check the timing constraints that depend on the link"""
        if self.period_s <= link.delay_s:
            raise InvalidConfigError(
                f"period {self.period_s:g} s must exceed the packet delay {link.delay_s:g} s"
            )
        if self.scheme is Scheme.ASYN_INFER:
            low, high = self.shift_band(link)
            if not (low - SHIFT_TOLERANCE <= self.shift_s <= high + SHIFT_TOLERANCE):
                raise InvalidConfigError(
                    f"shift {self.shift_s:g} s outside the feasible band [{low:g}, {high:g}] s"
                )

    def with_changes(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class ReindexedField:
    """Sensors sorted by descending squared spatial factor to the target"""
    order: Tuple[int, ...]
    factors: np.ndarray


@dataclass
class MseValue:
    value: float
    components: Dict[str, object] = dc_field(default_factory=dict)

    def __float__(self):
        return float(self.value)


def reindex(params, field):
    """
    Reorder sensors by their squared spatial factor e^{-2 b r_m,s} to the target.

    The target always comes first; ties go to the smaller sensor id.
    """
    factors = field.target_factors(params.b_per_m)
    target = field.target - 1
    order = sorted(range(field.count), key=lambda n: (n != target, -factors[n], n))
    return ReindexedField(order=tuple(n + 1 for n in order), factors=factors[order])


# ---------------------------------------------------------------------------
# Kernels shared with the optimizers. All accept numpy arrays for eps.
# ---------------------------------------------------------------------------

def syn_gain(weights, eps, decay_T):
    """(1 - eps) sum_s w_s eps^(s-1) / (1 - e^{-2aT} eps^M), weights in descending order"""
    w = np.asarray(weights, dtype=float)
    q = np.asarray(eps, dtype=float)
    powers = q[..., None] ** np.arange(w.size)
    return (1.0 - q) * (powers @ w) / (1.0 - decay_T * q ** w.size)


def syn_gain_deps(weights, eps, decay_T):
    """Derivative of syn_gain with respect to eps"""
    w = np.asarray(weights, dtype=float)
    q = np.asarray(eps, dtype=float)
    M = w.size
    k = np.arange(M)
    series = q[..., None] ** k @ w
    dseries = q[..., None] ** np.maximum(k - 1, 0) @ (k * w)
    den = 1.0 - decay_T * q ** M
    num = (1.0 - q) * series
    dnum = -series + (1.0 - q) * dseries
    dden = -decay_T * M * q ** max(M - 1, 0)
    return (dnum * den - num * dden) / den ** 2


def reception_weights(eps, decay_h, decay_T, M):
    """
    Per-sensor weights of the asynchronous closed form, in transmission order.

    Each weight is (1 - e^{-2ah} eps) E[1 - e^{-2aD} | reception from sensor n],
    written with eps^(M-n) e^{2ah(n-1)} so nothing is divided by a small power of eps.
    """
    q = np.asarray(eps, dtype=float)[..., None]
    x = np.asarray(decay_h, dtype=float)[..., None]
    n = np.arange(1, M + 1)
    tail = (1.0 - q) * q ** (M - n) * x ** (1 - n) * (x ** M - decay_T) / (1.0 - decay_T * q ** M)
    return 1.0 - x + tail


def _reception_weights_deps(q, x, y, M):
    q = q[..., None]
    x = x[..., None]
    n = np.arange(1, M + 1)
    den = 1.0 - y * q ** M
    dnum = ((M - n) * (1.0 - q) * q ** np.maximum(M - n - 1, 0)
            - q ** (M - n)
            + y * q ** (2 * M - n - 1) * (n * (1.0 - q) + q))
    return x ** (1 - n) * (x ** M - y) * dnum / den ** 2


def _reception_weights_dshift(q, x, y, M):
    """Derivative of the weights with respect to e^{-2ah}"""
    q = q[..., None]
    x = x[..., None]
    n = np.arange(1, M + 1)
    g = (1.0 - q) * q ** (M - n) / (1.0 - y * q ** M)
    return -1.0 + g * ((M + 1 - n) * x ** (M - n) - (1 - n) * y * x ** (-n))


def asyn_gain(weights, eps, decay_h, decay_T):
    """(1 - eps) sum_n w_n Psi_n / (1 - e^{-2ah} eps), weights in transmission order"""
    w = np.asarray(weights, dtype=float)
    q = np.asarray(eps, dtype=float)
    x = np.asarray(decay_h, dtype=float)
    psi = reception_weights(q, x, decay_T, w.size)
    return (1.0 - q) * (psi @ w) / (1.0 - x * q)


def asyn_gain_deps(weights, eps, decay_h, decay_T):
    """Derivative of asyn_gain with respect to eps"""
    w = np.asarray(weights, dtype=float)
    q = np.asarray(eps, dtype=float)
    x = np.asarray(decay_h, dtype=float)
    weighted = reception_weights(q, x, decay_T, w.size) @ w
    dweighted = _reception_weights_deps(q, x, decay_T, w.size) @ w
    return ((x - 1.0) * weighted + (1.0 - q) * (1.0 - x * q) * dweighted) / (1.0 - x * q) ** 2


def asyn_gain_dshift(weights, eps, decay_h, decay_T):
    """Derivative of asyn_gain with respect to e^{-2ah}"""
    w = np.asarray(weights, dtype=float)
    q = np.asarray(eps, dtype=float)
    x = np.asarray(decay_h, dtype=float)
    weighted = reception_weights(q, x, decay_T, w.size) @ w
    dweighted = _reception_weights_dshift(q, x, decay_T, w.size) @ w
    return (1.0 - q) * q / (1.0 - x * q) ** 2 * weighted + (1.0 - q) / (1.0 - x * q) * dweighted


def mse_scale(source, period_s):
    """sigma2 gamma_o / (2 a T (gamma_o + 1)), the factor in front of every gain term"""
    gamma = source.gamma_o
    return source.sigma2_x * gamma / (2.0 * source.a_per_s * period_s * (gamma + 1.0))


# ---------------------------------------------------------------------------
# Public closed forms
# ---------------------------------------------------------------------------

def resolve_eps(link, eps_bar=None, blep="average"):
    """Average BLEP to use: explicit override, the Rayleigh average, or its simplified form"""
    if eps_bar is not None:
        if not 0.0 <= eps_bar <= 1.0:
            raise InvalidConfigError(f"eps_bar must lie in [0, 1], got {eps_bar}")
        return float(eps_bar)
    if blep == "average":
        return blep_average(link)
    if blep == "simplified":
        return blep_average_simplified(link)
    raise InvalidConfigError(f"unknown BLEP form '{blep}'")


def _check_field(field, scheme):
    if field.count != scheme.sensors:
        raise InvalidConfigError(
            f"field has {field.count} sensors but the scheme expects {scheme.sensors}"
        )
    if field.target != scheme.target:
        field = field.with_target(scheme.target)
    return field


def _syn_value(source, link, scheme, weights, eps):
    decay_T = math.exp(-2.0 * source.a_per_s * scheme.period_s)
    delay = math.exp(-2.0 * source.a_per_s * link.delay_s)
    gain = float(syn_gain(weights, eps, decay_T))
    scale = mse_scale(source, scheme.period_s) * delay
    M = len(weights)
    beta = scale * (1.0 - decay_T) * (1.0 - eps) / (1.0 - decay_T * eps ** M)
    value = source.sigma2_x - scale * (1.0 - decay_T) * gain
    return MseValue(value, {"eps_bar": eps, "beta_syn": beta})


def _asyn_value(source, link, scheme, weights, eps):
    a, T = source.a_per_s, scheme.period_s
    decay_T = math.exp(-2.0 * a * T)
    decay_h = math.exp(-2.0 * a * scheme.shift_s)
    scale = mse_scale(source, T) * math.exp(-2.0 * a * link.delay_s)
    psi = reception_weights(eps, decay_h, decay_T, len(weights))
    beta = scale * (1.0 - eps) / (1.0 - decay_h * eps)
    value = source.sigma2_x - beta * float(psi @ np.asarray(weights, dtype=float))
    return MseValue(value, {"eps_bar": eps, "beta_asyn": beta, "psi": tuple(float(p) for p in psi)})


def mse_no_infer(source, link, scheme, *, eps_bar=None, blep="average"):
    """
    Average MSE when the server only uses the target's own samples.

    Args:
        source (SourceParams): Source parameters
        link (LinkParams): Link parameters
        scheme (SchemeConfig): Period (the scheme tag is ignored)
        eps_bar (float): Optional average-BLEP override
        blep (str): "average" or "simplified" when eps_bar is not given

    Returns:
        MseValue
    """
    scheme.validate(link)
    eps = resolve_eps(link, eps_bar, blep)
    return _syn_value(source, link, scheme, [1.0], eps)


def mse_syn_infer(source, field, link, scheme, *, eps_bar=None, blep="average"):
    """
    Average MSE with synchronous transmission and inference from the most
    correlated sample of the latest successful period.
    """
    scheme.validate(link)
    field = _check_field(field, scheme)
    eps = resolve_eps(link, eps_bar, blep)
    weights = reindex(source, field).factors
    return _syn_value(source, link, scheme, weights, eps)


def mse_syn_infer_approx(source, mssc, link, scheme, *, eps_bar=None, blep="average"):
    """Synchronous closed form with every non-target factor replaced by the MSSC"""
    if scheme.sensors < 2:
        raise InvalidConfigError("the MSSC approximation needs at least two sensors")
    scheme.validate(link)
    eps = resolve_eps(link, eps_bar, blep)
    weights = [1.0] + [float(mssc)] * (scheme.sensors - 1)
    result = _syn_value(source, link, scheme, weights, eps)
    result.components["mssc"] = float(mssc)
    return result


def mse_asyn_infer(source, field, link, scheme, *, eps_bar=None, blep="average"):
    """
    Average MSE with sensors transmitting in id order, h apart, and the server
    inferring from the latest successful reception.
    """
    if scheme.scheme is not Scheme.ASYN_INFER:
        raise InvalidConfigError("mse_asyn_infer needs an asyn-infer scheme")
    scheme.validate(link)
    field = _check_field(field, scheme)
    eps = resolve_eps(link, eps_bar, blep)
    return _asyn_value(source, link, scheme, field.target_factors(source.b_per_m), eps)


def mse_asyn_infer_approx(source, mssc, link, scheme, *, eps_bar=None, blep="average"):
    """Asynchronous closed form with every non-target factor replaced by the MSSC"""
    if scheme.scheme is not Scheme.ASYN_INFER:
        raise InvalidConfigError("mse_asyn_infer_approx needs an asyn-infer scheme")
    scheme.validate(link)
    eps = resolve_eps(link, eps_bar, blep)
    weights = np.full(scheme.sensors, float(mssc))
    weights[scheme.target - 1] = 1.0
    result = _asyn_value(source, link, scheme, weights, eps)
    result.components["mssc"] = float(mssc)
    return result


def mse(source, field, link, scheme, *, eps_bar=None, blep="average"):
    """Dispatch on the scheme tag"""
    if scheme.scheme is Scheme.NO_INFER:
        return mse_no_infer(source, link, scheme, eps_bar=eps_bar, blep=blep)
    if scheme.scheme is Scheme.SYN_INFER:
        return mse_syn_infer(source, field, link, scheme, eps_bar=eps_bar, blep=blep)
    return mse_asyn_infer(source, field, link, scheme, eps_bar=eps_bar, blep=blep)


def mse_approx(source, mssc, link, scheme, *, eps_bar=None, blep="average"):
    """MSSC-approximation dispatch; no inference does not depend on the MSSC"""
    if scheme.scheme is Scheme.NO_INFER:
        return mse_no_infer(source, link, scheme, eps_bar=eps_bar, blep=blep)
    if scheme.scheme is Scheme.SYN_INFER:
        return mse_syn_infer_approx(source, mssc, link, scheme, eps_bar=eps_bar, blep=blep)
    return mse_asyn_infer_approx(source, mssc, link, scheme, eps_bar=eps_bar, blep=blep)


def dmse_deps(source, field, link, scheme, eps_bar):
    """Analytic derivative of the average MSE with respect to the average BLEP"""
    a, T = source.a_per_s, scheme.period_s
    decay_T = math.exp(-2.0 * a * T)
    scale = mse_scale(source, T) * math.exp(-2.0 * a * link.delay_s)
    if scheme.scheme is Scheme.ASYN_INFER:
        field = _check_field(field, scheme)
        decay_h = math.exp(-2.0 * a * scheme.shift_s)
        weights = field.target_factors(source.b_per_m)
        return -scale * asyn_gain_deps(weights, eps_bar, decay_h, decay_T)
    if scheme.scheme is Scheme.SYN_INFER:
        weights = reindex(source, _check_field(field, scheme)).factors
    else:
        weights = [1.0]
    return -scale * (1.0 - decay_T) * syn_gain_deps(weights, eps_bar, decay_T)


def instantaneous_mse(source, field, sensor, age_s):
    """
    MSE of the MMSE reconstruction of the target from one noisy sample of
    `sensor` generated `age_s` seconds earlier.
    """
    r = field.distances[field.target - 1, sensor - 1]
    gamma = source.gamma_o
    corr2 = np.exp(-2.0 * source.a_per_s * np.asarray(age_s) - 2.0 * source.b_per_m * r)
    return source.variance(field.target) * (1.0 - gamma * corr2 / (gamma + 1.0))


# ---------------------------------------------------------------------------
# Bounds and the shape of the asynchronous MSE in eps
# ---------------------------------------------------------------------------

def upsilon(source, field, link, scheme, ordering="reindexed"):
    """
    MSSC level below which the asynchronous MSE first falls, then rises, in eps.

    Uses the factors of the last two sensors: the two weakest after reindexing
    ("reindexed", default) or the last two in transmission order ("raw").
    """
    if scheme.scheme is not Scheme.ASYN_INFER:
        raise InvalidConfigError("upsilon is defined for asyn-infer only")
    field = _check_field(field, scheme)
    M = scheme.sensors
    a, T, h = source.a_per_s, scheme.period_s, scheme.shift_s
    if ordering == "reindexed":
        factors = reindex(source, field).factors
    elif ordering == "raw":
        factors = field.target_factors(source.b_per_m)
    else:
        raise InvalidConfigError(f"unknown ordering '{ordering}'")

    decay_h = math.exp(-2.0 * a * h)
    wrap = -math.expm1(-2.0 * a * (T - M * h))
    numer = wrap * decay_h * (factors[M - 2] - factors[M - 1] * (1.0 - decay_h))
    return numer / ((M - 1) * (1.0 - decay_h) ** 2) - 1.0 / (M - 1)


def blep_dip_threshold(source, field, link, scheme):
    """
    MSSC below which d MSE / d eps < 0 as eps -> 0+ for this field.

    Exact slope-sign threshold of the asynchronous closed form; it depends on
    the factors of the last two transmitters in id order.
    """
    if scheme.scheme is not Scheme.ASYN_INFER:
        raise InvalidConfigError("the dip threshold is defined for asyn-infer only")
    field = _check_field(field, scheme)
    M = scheme.sensors
    a, T, h = source.a_per_s, scheme.period_s, scheme.shift_s
    w = field.target_factors(source.b_per_m)
    x = math.exp(-2.0 * a * h)
    wrap = x * -math.expm1(-2.0 * a * (T - M * h))
    lead = wrap * (x * w[M - 2] - (2.0 - x) * w[M - 1]) / (1.0 - x) ** 2
    return (lead - 1.0) / (M - 1)


def _asyn_minimum_over_eps(source, field, link, scheme):
    """Smallest asynchronous MSE over eps in [0, 1] and where it occurs"""
    def value(eps):
        return mse_asyn_infer(source, field, link, scheme, eps_bar=eps).value

    def slope(eps):
        return float(dmse_deps(source, field, link, scheme, eps))

    at_zero = value(0.0)
    balanced = math.isclose(scheme.shift_s * scheme.sensors, scheme.period_s, rel_tol=1e-12)
    if balanced or slope(0.0) >= 0.0:
        return at_zero, 0.0

    grid = np.linspace(0.0, 1.0, 401)[1:-1]
    slopes = np.array([slope(q) for q in grid])
    rising = np.nonzero(slopes > 0.0)[0]
    if rising.size == 0:
        best = int(np.argmin([value(q) for q in grid]))
        return value(grid[best]), float(grid[best])

    hi = grid[rising[0]]
    lo = grid[rising[0] - 1] if rising[0] > 0 else 0.0
    eps_star = brentq(slope, lo, hi, xtol=1e-10)
    grid_min = min(value(q) for q in grid)
    logger.debug("asyn MSE dips to its minimum at eps* = %.6g", eps_star)
    return min(value(eps_star), grid_min, at_zero), eps_star


def bounds(source, field, link, scheme, axis):
    """
    Lower and upper bounds of the average MSE along one axis.

    BLEP axis: eps ranges over [0, 1] with everything else fixed.
    Spatial axis: every non-target factor ranges over [0, 1].

    Returns:
        tuple: (lower MseValue, upper MseValue)
    """
    axis = BoundAxis(axis)
    scheme.validate(link)
    sigma2 = source.sigma2_x

    if scheme.scheme is Scheme.NO_INFER:
        if axis is BoundAxis.BLEP:
            floor = mse_no_infer(source, link, scheme, eps_bar=0.0).value
            return MseValue(floor), MseValue(sigma2)
        value = mse_no_infer(source, link, scheme).value
        return MseValue(value), MseValue(value)

    field = _check_field(field, scheme)
    eps = blep_average(link)
    M = scheme.sensors

    if scheme.scheme is Scheme.SYN_INFER:
        if axis is BoundAxis.BLEP:
            floor = mse_no_infer(source, link, scheme, eps_bar=0.0).value
            return MseValue(floor), MseValue(sigma2)
        beta = mse_syn_infer(source, field, link, scheme).components["beta_syn"]
        series = float(np.sum(eps ** np.arange(M)))
        lower = MseValue(sigma2 - beta * series, {"beta_syn": beta})
        upper = MseValue(sigma2 - beta, {"beta_syn": beta})
        return lower, upper

    if axis is BoundAxis.BLEP:
        floor, eps_star = _asyn_minimum_over_eps(source, field, link, scheme)
        return MseValue(floor, {"eps_star": eps_star}), MseValue(sigma2)
    current = mse_asyn_infer(source, field, link, scheme)
    beta = current.components["beta_asyn"]
    psi = current.components["psi"]
    lower = MseValue(sigma2 - beta * sum(psi), {"beta_asyn": beta})
    upper = MseValue(sigma2 - beta * psi[scheme.target - 1], {"beta_asyn": beta})
    return lower, upper


# ---------------------------------------------------------------------------
# Inter-reception statistics of the renewal structure
# ---------------------------------------------------------------------------

def inter_reception_expectations(scheme, eps_bar, a_per_s):
    """
    Closed-form statistics of the gaps between receptions used by the server.

    Returns:
        dict: mean_gap_s (between any two receptions, asynchronous),
            mean_period_gap_s (between successful periods, synchronous),
            mean_period_decay (E[e^{-2a D}] over successful-period gaps)
    """
    q = float(eps_bar)
    M = scheme.effective_sensors
    T = scheme.period_s
    decay_T = math.exp(-2.0 * a_per_s * T)
    stats = {
        "mean_period_gap_s": T / (1.0 - q ** M),
        "mean_period_decay": decay_T * (1.0 - q ** M) / (1.0 - decay_T * q ** M),
    }
    if q < 1.0:
        stats["mean_gap_s"] = T / (M * (1.0 - q))
    return stats


def slot_advance_probability(eps_bar, slots):
    """Probability that the next reception is `slots` transmission slots ahead"""
    q = float(eps_bar)
    return q ** (slots - 1) * (1.0 - q)


def mssc_of(source, field):
    """MSSC of the target, or 0 for a single-sensor field"""
    if field.count < 2:
        return 0.0
    return field_mssc(source, field)
