"""
Short-Packet Transmission Reliability
Finite-blocklength BLEP: normal approximation, segmented-linear form,
Rayleigh average and the blocklength derivatives used by the optimizers
"""

import csv
import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from .errors import DomainError, InvalidConfigError

logger = logging.getLogger(__name__)


def db_to_linear(value_db):
    return 10.0 ** (value_db / 10.0)


def linear_to_db(value):
    return 10.0 * math.log10(value)


@dataclass(frozen=True)
class LinkParams:
    """
    Short-packet link between a sensor and the server.

    Attributes:
        info_bits: Information bits per packet (L)
        blocklength: Channel uses per packet (N); relaxed to a real inside optimizers
        symbol_s: Symbol duration (s)
        snr_avg: Average received SNR (linear)
    """
    info_bits: float = 160.0
    blocklength: float = 80.0
    symbol_s: float = 1e-4
    snr_avg: float = 10.0 ** 0.5

    def __post_init__(self):
        for name in ("info_bits", "blocklength", "symbol_s", "snr_avg"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidConfigError(f"{name} must be positive and finite, got {value}")

    @classmethod
    def from_db(cls, info_bits, blocklength, symbol_s, snr_db):
        return cls(info_bits=info_bits, blocklength=blocklength, symbol_s=symbol_s,
                   snr_avg=db_to_linear(snr_db))

    @property
    def snr_db(self):
        return linear_to_db(self.snr_avg)

    @property
    def delay_s(self):
        """Packet transmission delay tau = N T_s"""
        return self.blocklength * self.symbol_s

    @property
    def eta(self):
        """SNR at which the Shannon rate equals L/N"""
        return math.expm1(self.info_bits / self.blocklength)

    @property
    def slope(self):
        """Slope of the linear segment (negative)"""
        n = self.blocklength
        return -math.sqrt(n / (2.0 * math.pi * math.expm1(2.0 * self.info_bits / n)))

    @property
    def knots(self):
        """SNRs where the segmented BLEP leaves 1 and reaches 0"""
        half_width = 1.0 / (2.0 * self.slope)
        return self.eta + half_width, self.eta - half_width

    def with_blocklength(self, blocklength):
        return replace(self, blocklength=blocklength)

    def with_snr_db(self, snr_db):
        return replace(self, snr_avg=db_to_linear(snr_db))


def _check_snr(gamma_r):
    g = np.asarray(gamma_r, dtype=float)
    if np.any(~(g > 0)):
        raise DomainError("instantaneous SNR must be positive")
    return g


def _scalar_or_array(value, like):
    if np.ndim(like) == 0:
        return float(value)
    return value


def blep_instantaneous(link, gamma_r):
    """
    Normal-approximation BLEP Q(sqrt(N/V)(C - L/N)) with C and V in nats.

    Args:
        link (LinkParams): Link parameters
        gamma_r: Instantaneous SNR (linear), scalar or array

    Returns:
        Error probability in [0, 1], same shape as gamma_r
    """
    g = _check_snr(gamma_r)
    capacity = np.log1p(g)
    dispersion = -np.expm1(-2.0 * capacity)
    n = link.blocklength
    arg = np.sqrt(n / dispersion) * (capacity - link.info_bits / n)
    return _scalar_or_array(norm.sf(arg), gamma_r)


def blep_segmented(link, gamma_r):
    """
    Segmented-linear BLEP: 1 below the lower knot, 0 above the upper knot,
    slope * (gamma - eta) + 1/2 in between.
    """
    g = _check_snr(gamma_r)
    eps = np.clip(link.slope * (g - link.eta) + 0.5, 0.0, 1.0)
    return _scalar_or_array(eps, gamma_r)


def _clamp_probability(value, label):
    if value < 0.0 or value > 1.0:
        logger.debug("%s = %.6g clamped to [0, 1]", label, value)
        return min(max(value, 0.0), 1.0)
    return value


def blep_average(link):
    """
    Average BLEP over Rayleigh fading of the segmented-linear form.

    Args:
        link (LinkParams): Link parameters

    Returns:
        float: eps_bar in [0, 1]
    """
    lam = link.slope
    snr = link.snr_avg
    lower, upper = link.knots
    if lower >= 0.0:
        value = 1.0 + snr * lam * (math.exp(-lower / snr) - math.exp(-upper / snr))
    else:
        # Lower knot below zero SNR: the linear segment starts at gamma = 0
        value = (0.5 - lam * link.eta) - lam * snr * math.expm1(-upper / snr)
    return _clamp_probability(value, "eps_bar")


def _simplified_exponent(link):
    n = link.blocklength
    return link.eta - math.sqrt(math.pi * link.info_bits) / n


def blep_average_simplified(link):
    """Simplified average BLEP 1 - exp(-(eta - sqrt(pi L)/N) / snr_avg)"""
    value = -math.expm1(-_simplified_exponent(link) / link.snr_avg)
    return _clamp_probability(value, "simplified eps_bar")


def _warn_small_payload(link):
    if link.info_bits < math.pi:
        logger.warning(
            "L = %.3g < pi: the BLEP derivative sign and convexity in N are not guaranteed",
            link.info_bits,
        )
        return True
    return False


def dblep_dN(link, warn=True):
    """
    Derivative of the simplified average BLEP with respect to N.

    Negative whenever L >= pi; a warning is logged otherwise unless `warn` is off
    (optimizers check the payload once up front).
    """
    if warn:
        _warn_small_payload(link)
    L, n, snr = link.info_bits, link.blocklength, link.snr_avg
    decay = math.exp(-_simplified_exponent(link) / snr)
    return (math.sqrt(math.pi * L) - L * math.exp(L / n)) * decay / (snr * n * n)


def d2blep_dN2(link):
    """Second derivative of the simplified average BLEP with respect to N"""
    L, n, snr = link.info_bits, link.blocklength, link.snr_avg
    growth = math.exp(L / n)
    root = math.sqrt(math.pi * L)
    du = (root - L * growth) / n ** 2
    d2u = (L * L * growth + 2.0 * n * (L * growth - root)) / n ** 4
    decay = math.exp(-_simplified_exponent(link) / snr)
    return decay * (d2u / snr - (du / snr) ** 2)


def snr_from_link_budget(distance_m=200.0, tx_power_mw=0.2, bandwidth_hz=1e4,
                         noise_psd_dbm_per_hz=-174.0, shadowing_db=0.0):
    """
    Average received SNR (linear) from a log-distance link budget.

    Path loss is 35.3 + 37.6 log10(d) dB plus shadowing; noise power is the
    PSD integrated over the per-sensor bandwidth.
    """
    if distance_m <= 0 or tx_power_mw <= 0 or bandwidth_hz <= 0:
        raise InvalidConfigError("distance, power and bandwidth must be positive")
    path_loss_db = 35.3 + 37.6 * math.log10(distance_m) + shadowing_db
    tx_dbm = 10.0 * math.log10(tx_power_mw)
    noise_dbm = noise_psd_dbm_per_hz + 10.0 * math.log10(bandwidth_hz)
    return db_to_linear(tx_dbm - path_loss_db - noise_dbm)


FIXTURE_COLUMNS = ["info_bits", "blocklength", "symbol_s", "snr_db", "eps_bar", "eps_bar_simplified"]


def write_blep_fixtures(path, links):
    """Write link parameters and both average-BLEP forms with 12 significant digits"""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(FIXTURE_COLUMNS)
        for link in links:
            row = [link.info_bits, link.blocklength, link.symbol_s, link.snr_db,
                   blep_average(link), blep_average_simplified(link)]
            writer.writerow([f"{v:.12g}" for v in row])


def read_blep_fixtures(path):
    """
    Read a BLEP fixture file.

    Returns:
        list: (LinkParams, eps_bar, eps_bar_simplified) tuples
    """
    fixtures = []
    with open(path, "r", newline="") as f:
        for row in csv.DictReader(f):
            link = LinkParams.from_db(float(row["info_bits"]), float(row["blocklength"]),
                                      float(row["symbol_s"]), float(row["snr_db"]))
            fixtures.append((link, float(row["eps_bar"]), float(row["eps_bar_simplified"])))
    return fixtures
