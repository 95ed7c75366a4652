"""
Preference Regions
MSSC thresholds that decide between no inference, synchronous inference
and asynchronous inference
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .analytic import (
    Scheme,
    mse_asyn_infer_approx,
    mse_no_infer,
    mse_syn_infer_approx,
    reception_weights,
    resolve_eps,
)
from .errors import InvalidConfigError, RegionDegenerateError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Thresholds:
    thr1: float
    thr2: float
    eps_bar: float


@dataclass
class RegionReport:
    """
    Winner of the three-way comparison at one MSSC.

    Attributes:
        mssc: MSSC of the target
        thr1: Threshold above which inference beats no inference
        thr2: Threshold above which asynchronous beats synchronous inference
        winner: Preferred scheme
        gain_infer: MSE without inference over MSE with synchronous inference
        asyn_over_syn: Synchronous MSE over asynchronous MSE
    """
    mssc: float
    thr1: float
    thr2: float
    winner: Scheme
    gain_infer: Optional[float] = None
    asyn_over_syn: Optional[float] = None


def threshold_infer(source, link, scheme, *, eps_bar=None, blep="average"):
    """
    MSSC above which synchronous inference beats no inference.

    Args:
        source (SourceParams): Source parameters
        link (LinkParams): Link parameters
        scheme (SchemeConfig): Supplies the period T
        eps_bar (float): Optional average-BLEP override

    Returns:
        float: e^{-2aT}(1 - eps) / (1 - e^{-2aT} eps)
    """
    eps = resolve_eps(link, eps_bar, blep)
    decay_T = math.exp(-2.0 * source.a_per_s * scheme.period_s)
    return decay_T * (1.0 - eps) / (1.0 - decay_T * eps)


def _crossover_terms(source, link, scheme, eps):
    M = scheme.sensors
    a = source.a_per_s
    decay_T = math.exp(-2.0 * a * scheme.period_s)
    decay_h = math.exp(-2.0 * a * scheme.shift_s)
    psi = reception_weights(eps, decay_h, decay_T, M)
    own = float(psi[scheme.target - 1])
    others = float(psi.sum()) - own
    lam = (1.0 - decay_T) * (1.0 - decay_h * eps) / (1.0 - decay_T * eps ** M)
    tail = float(np.sum(eps ** np.arange(1, M)))
    return lam, own, others, tail


def threshold_asyn_over_syn(source, field, link, scheme, *, eps_bar=None, blep="average"):
    """
    MSSC above which asynchronous inference beats synchronous inference,
    both in their MSSC-approximation forms.

    The approximations are linear in the MSSC, so the threshold is their
    exact crossover.

    Raises:
        RegionDegenerateError: when the asynchronous advantage does not grow
            with the MSSC; `asyn_always_better` tells which side wins on [0, 1]
    """
    if scheme.scheme is not Scheme.ASYN_INFER:
        raise InvalidConfigError("threshold_asyn_over_syn needs an asyn-infer scheme (for h)")
    if field is not None and field.count != scheme.sensors:
        raise InvalidConfigError(
            f"field has {field.count} sensors but the scheme expects {scheme.sensors}"
        )
    eps = resolve_eps(link, eps_bar, blep)
    lam, own, others, tail = _crossover_terms(source, link, scheme, eps)
    denom = others - lam * tail
    if denom <= 0.0:
        # Both sides are linear in the MSSC, so the two ends decide [0, 1]
        always = own > lam and own + others > lam * (1.0 + tail)
        raise RegionDegenerateError(
            f"asyn-over-syn threshold undefined (denominator {denom:.3e} <= 0)",
            asyn_always_better=always,
        )
    return (lam - own) / denom


def classify(mssc, thresholds):
    """
    Three-way scheme choice.

    NoInfer when mssc <= thr1, AsynInfer when mssc >= thr2, SynInfer in between.
    """
    if mssc <= thresholds.thr1:
        winner = Scheme.NO_INFER
    elif mssc >= thresholds.thr2:
        winner = Scheme.ASYN_INFER
    else:
        winner = Scheme.SYN_INFER
    return RegionReport(mssc=mssc, thr1=thresholds.thr1, thr2=thresholds.thr2, winner=winner)


def thresholds_for(source, field, link, scheme, *, eps_bar=None, blep="average"):
    """Both thresholds at one operating point; a degenerate thr2 becomes -inf or +inf"""
    eps = resolve_eps(link, eps_bar, blep)
    thr1 = threshold_infer(source, link, scheme, eps_bar=eps)
    try:
        thr2 = threshold_asyn_over_syn(source, field, link, scheme, eps_bar=eps)
    except RegionDegenerateError as e:
        logger.info("%s; asyn always better: %s", e, e.asyn_always_better)
        thr2 = -math.inf if e.asyn_always_better else math.inf
    return Thresholds(thr1=thr1, thr2=thr2, eps_bar=eps)


def preference_region(source, field, link, scheme, mssc, *, eps_bar=None, blep="average"):
    """
    Thresholds, classification and the approximation gains in one call.

    Args:
        source (SourceParams): Source parameters
        field (SensorField): Sensor geometry (only its size is used)
        link (LinkParams): Link parameters
        scheme (SchemeConfig): asyn-infer scheme supplying T and h
        mssc (float): MSSC to classify

    Returns:
        RegionReport
    """
    thresholds = thresholds_for(source, field, link, scheme, eps_bar=eps_bar, blep=blep)
    report = classify(mssc, thresholds)
    eps = thresholds.eps_bar
    no = mse_no_infer(source, link, scheme, eps_bar=eps).value
    syn = mse_syn_infer_approx(source, mssc, link, scheme, eps_bar=eps).value
    asyn = mse_asyn_infer_approx(source, mssc, link, scheme, eps_bar=eps).value
    report.gain_infer = no / syn
    report.asyn_over_syn = syn / asyn
    return report


def exhaustive_region_oracle(source, field, link, scheme, mssc_grid, *, eps_bar=None, blep="average"):
    """
    Winner at each MSSC from direct evaluation of the three approximations.

    Ties follow the threshold conventions: no inference wins a tie with
    inference, asynchronous wins a tie with synchronous.

    Returns:
        list: (mssc, Scheme) pairs in grid order
    """
    if scheme.scheme is not Scheme.ASYN_INFER:
        raise InvalidConfigError("the region oracle needs an asyn-infer scheme (for h)")
    eps = resolve_eps(link, eps_bar, blep)
    no = mse_no_infer(source, link, scheme, eps_bar=eps).value
    winners = []
    for mssc in mssc_grid:
        syn = mse_syn_infer_approx(source, mssc, link, scheme, eps_bar=eps).value
        asyn = mse_asyn_infer_approx(source, mssc, link, scheme, eps_bar=eps).value
        if no <= min(syn, asyn):
            winner = Scheme.NO_INFER
        elif asyn <= syn:
            winner = Scheme.ASYN_INFER
        else:
            winner = Scheme.SYN_INFER
        winners.append((float(mssc), winner))
    return winners
