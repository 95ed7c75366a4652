"""
Blocklength and Time-Shift Adaptation
Root-guided blocklength choice for synchronous inference, alternating
time-shift/blocklength descent for asynchronous inference, and the
exhaustive-search and fixed-blocklength baselines
"""

import logging
import math
from dataclasses import dataclass, field as dc_field
from typing import List, Optional

import numpy as np
from scipy.optimize import root_scalar

from .analytic import (
    MseValue,
    Scheme,
    asyn_gain,
    asyn_gain_deps,
    asyn_gain_dshift,
    mse as analytic_mse,
    mse_scale,
    reindex,
    syn_gain,
    syn_gain_deps,
)
from .errors import InvalidConfigError, NumericBracketError
from .spt import blep_average_simplified, dblep_dN

logger = logging.getLogger(__name__)

BRACKET_METHODS = ("brentq", "brenth", "bisect", "ridder", "toms748")
# Points in the sign-change scan that guards the root finder
SCAN_POINTS = 64
DESCENT_SLACK = 1e-12


@dataclass(frozen=True)
class OptimizerConfig:
    """
    Attributes:
        n_min: Smallest blocklength (channel uses)
        n_max: Largest blocklength; defaults to the largest value the period allows
        max_iterations: Iteration cap of the joint optimizer
        tol_shift_s: Stop when the time shift moves less than this (s)
        tol_blocklength: Stop when the blocklength moves less than this
        root_tol: Residual tolerance at reported roots
        n_init: Starting blocklength of the joint optimizer and of the baselines
        h_init_s: Starting time shift; defaults to half the feasible band
        root_method: Bracketing method of scipy.optimize.root_scalar, or
            "secant" for an unbracketed fast path that falls back to brentq
    """
    n_min: int = 10
    n_max: Optional[int] = None
    max_iterations: int = 3
    tol_shift_s: float = 1e-4
    tol_blocklength: float = 1.0
    root_tol: float = 1e-9
    n_init: int = 80
    h_init_s: Optional[float] = None
    root_method: str = "brentq"

    def __post_init__(self):
        if self.n_min < 1:
            raise InvalidConfigError(f"n_min must be at least 1, got {self.n_min}")
        if self.n_max is not None and self.n_max < self.n_min:
            raise InvalidConfigError(f"n_max {self.n_max} below n_min {self.n_min}")
        if self.max_iterations < 1:
            raise InvalidConfigError(f"max_iterations must be at least 1, got {self.max_iterations}")
        for name in ("tol_shift_s", "tol_blocklength", "root_tol"):
            if not getattr(self, name) > 0:
                raise InvalidConfigError(f"{name} must be positive")
        if self.root_method not in BRACKET_METHODS + ("secant",):
            raise InvalidConfigError(f"unknown root method '{self.root_method}'")


@dataclass
class TraceRow:
    iteration: int
    shift_s: Optional[float]
    blocklength: int
    mse: float
    residual_shift: float = float("nan")
    residual_blocklength: float = float("nan")
    note: str = ""


@dataclass
class OptResult:
    """
    Outcome of one optimization.

    `mse` is the objective (closed form with the simplified average BLEP);
    `mse.components["mse_average_blep"]` is the same point with the Rayleigh average.
    """
    blocklength: int
    shift_s: Optional[float]
    mse: MseValue
    iterations: int = 0
    converged: bool = True
    trace: List[TraceRow] = dc_field(default_factory=list)
    root: Optional[float] = None
    residual: Optional[float] = None
    evaluations: int = 0
    warnings: List[str] = dc_field(default_factory=list)


def _slots(duration_s, symbol_s):
    """Whole symbols that fit in a duration"""
    return int(math.floor(duration_s / symbol_s + 1e-9))


class _Objective:
    """Average MSE and its partial derivatives as functions of (N, h)"""

    def __init__(self, source, field, link, scheme):
        self.source = source
        self.link = link
        self.scheme = scheme
        self.a = source.a_per_s
        self.decay_T = math.exp(-2.0 * self.a * scheme.period_s)
        self.scale = mse_scale(source, scheme.period_s)
        if scheme.scheme is Scheme.NO_INFER:
            self.weights = np.ones(1)
        else:
            if field.count != scheme.sensors:
                raise InvalidConfigError(
                    f"field has {field.count} sensors but the scheme expects {scheme.sensors}"
                )
            field = field.with_target(scheme.target)
            if scheme.scheme is Scheme.SYN_INFER:
                self.weights = reindex(source, field).factors
            else:
                self.weights = field.target_factors(source.b_per_m)
        self.asyn = scheme.scheme is Scheme.ASYN_INFER

    def eps(self, n):
        return blep_average_simplified(self.link.with_blocklength(n))

    def _delay(self, n):
        return math.exp(-2.0 * self.a * n * self.link.symbol_s)

    def _gain(self, q, shift_s):
        if self.asyn:
            return float(asyn_gain(self.weights, q, math.exp(-2.0 * self.a * shift_s), self.decay_T))
        return (1.0 - self.decay_T) * float(syn_gain(self.weights, q, self.decay_T))

    def _gain_deps(self, q, shift_s):
        if self.asyn:
            return float(asyn_gain_deps(self.weights, q, math.exp(-2.0 * self.a * shift_s), self.decay_T))
        return (1.0 - self.decay_T) * float(syn_gain_deps(self.weights, q, self.decay_T))

    def mse(self, n, shift_s=None):
        gain = self._gain(self.eps(n), shift_s)
        return self.source.sigma2_x - self.scale * self._delay(n) * gain

    def mse_over_shifts(self, n, shifts):
        """Vectorized asynchronous MSE over an array of time shifts at one N"""
        x = np.exp(-2.0 * self.a * np.asarray(shifts, dtype=float))
        gain = asyn_gain(self.weights, self.eps(n), x, self.decay_T)
        return self.source.sigma2_x - self.scale * self._delay(n) * gain

    def d_blocklength(self, n, shift_s=None):
        q = self.eps(n)
        dq = dblep_dN(self.link.with_blocklength(n), warn=False)
        g = self._gain(q, shift_s)
        gq = self._gain_deps(q, shift_s)
        two_a_ts = 2.0 * self.a * self.link.symbol_s
        return self.scale * self._delay(n) * (two_a_ts * g - gq * dq)

    def d_shift(self, n, shift_s):
        x = math.exp(-2.0 * self.a * shift_s)
        gx = float(asyn_gain_dshift(self.weights, self.eps(n), x, self.decay_T))
        return 2.0 * self.a * x * self.scale * self._delay(n) * gx


def _payload_warnings(link):
    if link.info_bits < math.pi:
        message = f"L = {link.info_bits:g} < pi: convexity in N is not guaranteed"
        logger.warning(message)
        return [message]
    return []


def _find_root(f, lo, hi, cfg):
    """Root of f on [lo, hi]; f(lo) and f(hi) must differ in sign"""
    if cfg.root_method == "secant":
        try:
            sol = root_scalar(f, method="secant", x0=lo + 0.25 * (hi - lo), x1=lo + 0.75 * (hi - lo))
            if sol.converged and lo <= sol.root <= hi:
                return sol.root
        except (ArithmeticError, ValueError):
            pass
        logger.debug("secant fast path left [%g, %g]; falling back to brentq", lo, hi)
        method = "brentq"
    else:
        method = cfg.root_method
    try:
        sol = root_scalar(f, bracket=(lo, hi), method=method, xtol=1e-12)
    except ValueError as e:
        raise NumericBracketError(f"no sign change on [{lo:g}, {hi:g}]: f = ({f(lo):.3e}, {f(hi):.3e})") from e
    if not sol.converged:
        raise NumericBracketError(f"{method} did not converge on [{lo:g}, {hi:g}]: {sol.flag}")
    return sol.root


def _sign_changes(f, lo, hi):
    values = np.array([f(v) for v in np.linspace(lo, hi, SCAN_POINTS)])
    signs = np.sign(values)
    return int(np.count_nonzero(signs[:-1] * signs[1:] < 0))


def _best_of(candidates, objective):
    """Candidate with the smallest objective; the smaller candidate wins exact ties"""
    best, best_value = None, math.inf
    for c in sorted(set(candidates)):
        value = objective(c)
        if value < best_value:
            best, best_value = c, value
    return best, best_value


def _blocklength_range(link, scheme, cfg, shift_s=None):
    if scheme.scheme is Scheme.ASYN_INFER:
        upper = _slots(scheme.period_s - (scheme.sensors - 1) * shift_s, link.symbol_s)
    else:
        upper = _slots(scheme.period_s, link.symbol_s) - 1
    if cfg.n_max is not None:
        upper = min(upper, cfg.n_max)
    if upper < cfg.n_min:
        raise InvalidConfigError(
            f"no feasible blocklength: upper limit {upper} below n_min {cfg.n_min}"
        )
    return cfg.n_min, upper


def _shift_band(link, scheme, blocklength):
    lo = link.symbol_s
    hi = (scheme.period_s - blocklength * link.symbol_s) / (scheme.sensors - 1)
    if hi < lo:
        raise InvalidConfigError(
            f"N = {blocklength} leaves no feasible time shift (band [{lo:g}, {hi:g}] s)"
        )
    return lo, hi


def _plateau_end(gradient, lo, hi):
    """
    Smallest N in [lo, hi] with a non-zero derivative, given gradient(lo) == 0.

    Short blocklengths push the BLEP to exactly 1, where the MSE is flat at the
    prior variance; the flat stretch is a prefix of the range.
    """
    if gradient(hi) == 0.0:
        return hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if gradient(mid) == 0.0:
            lo = mid
        else:
            hi = mid
    return hi


def _optimize_blocklength(model, link, scheme, cfg, shift_s=None):
    lo, hi = _blocklength_range(link, scheme, cfg, shift_s)
    warnings = _payload_warnings(link)

    def gradient(n):
        return model.d_blocklength(n, shift_s)

    def objective(n):
        return model.mse(n, shift_s)

    if gradient(lo) == 0.0:
        first = _plateau_end(gradient, lo, hi)
        logger.debug("BLEP saturated at 1 for N < %d; searching [%d, %d]", first, first, hi)
        if first == hi and gradient(hi) == 0.0:
            return lo, "flat", None, None, warnings
        lo = first

    root = residual = None
    if gradient(lo) > 0:
        n_star, rule = lo, "lower boundary"
    elif gradient(hi) < 0:
        n_star, rule = hi, "upper boundary"
    elif _sign_changes(gradient, lo, hi) > 1:
        message = f"derivative in N changes sign more than once on [{lo}, {hi}]; using grid search"
        logger.warning(message)
        warnings.append(message)
        n_star, _ = _best_of(range(lo, hi + 1), objective)
        rule = "grid"
    else:
        root = _find_root(gradient, lo, hi, cfg)
        residual = abs(gradient(root))
        if residual >= cfg.root_tol:
            warnings.append(f"residual {residual:.3e} at N = {root:.6g} exceeds root_tol")
        candidates = [min(max(c, lo), hi) for c in (math.floor(root), math.ceil(root))]
        n_star, _ = _best_of(candidates, objective)
        rule = "root"
    logger.debug("blocklength step: N* = %d (%s)", n_star, rule)
    return n_star, rule, root, residual, warnings


def _finish(source, field, link, scheme, model, n_star, shift_s, rule):
    point = link.with_blocklength(n_star)
    value = model.mse(n_star, shift_s)
    at_point = scheme if shift_s is None else scheme.with_changes(shift_s=shift_s)
    exact = analytic_mse(source, field, point, at_point).value
    return MseValue(value, {"eps_bar": model.eps(n_star), "mse_average_blep": exact, "rule": rule})


def blocklength_gradient_syn(source, field, link, scheme, blocklength):
    """
    Derivative of the synchronous (or no-inference) MSE with respect to N.

    Uses the simplified average BLEP and its analytic N-derivative.
    """
    return _Objective(source, field, link, scheme).d_blocklength(blocklength)


def shift_gradient_asyn(source, field, link, scheme, shift_s):
    """Derivative of the asynchronous MSE with respect to the time shift, at N = link.blocklength"""
    return _Objective(source, field, link, scheme).d_shift(link.blocklength, shift_s)


def blocklength_gradient_asyn(source, field, link, scheme, blocklength):
    """Derivative of the asynchronous MSE with respect to N, at h = scheme.shift_s"""
    return _Objective(source, field, link, scheme).d_blocklength(blocklength, scheme.shift_s)


def optimize_blocklength_syn(source, field, link, scheme, cfg=None):
    """
    Optimal blocklength for synchronous inference (or no inference).

    N_min if the derivative is already positive there, the largest feasible N
    if it is still negative there, otherwise the better of floor/ceil of the root.

    Args:
        source (SourceParams): Source parameters
        field (SensorField): Sensor geometry (ignored for no inference)
        link (LinkParams): Link parameters; its blocklength is ignored
        scheme (SchemeConfig): syn-infer or no-infer scheme
        cfg (OptimizerConfig): Bounds and tolerances

    Returns:
        OptResult
    """
    cfg = cfg or OptimizerConfig()
    if scheme.scheme is Scheme.ASYN_INFER:
        raise InvalidConfigError("use joint_optimize or optimize_blocklength_asyn for asyn-infer")
    model = _Objective(source, field, link, scheme)
    n_star, rule, root, residual, warnings = _optimize_blocklength(model, link, scheme, cfg)
    value = _finish(source, field, link, scheme, model, n_star, None, rule)
    return OptResult(blocklength=n_star, shift_s=None, mse=value, root=root,
                     residual=residual, warnings=warnings)


def optimize_blocklength_asyn(source, field, link, scheme, cfg=None):
    """Optimal blocklength for asynchronous inference at the scheme's fixed time shift"""
    cfg = cfg or OptimizerConfig()
    model = _Objective(source, field, link, scheme)
    n_star, rule, root, residual, warnings = _optimize_blocklength(
        model, link, scheme, cfg, scheme.shift_s
    )
    value = _finish(source, field, link, scheme, model, n_star, scheme.shift_s, rule)
    return OptResult(blocklength=n_star, shift_s=scheme.shift_s, mse=value, root=root,
                     residual=residual, warnings=warnings)


def _optimize_shift(model, link, scheme, cfg, blocklength):
    lo, hi = _shift_band(link, scheme, blocklength)
    ts = link.symbol_s

    def gradient(h):
        return model.d_shift(blocklength, h)

    def objective(h):
        return model.mse(blocklength, h)

    root = residual = None
    if gradient(lo) > 0:
        h_star, rule = lo, "lower boundary"
    elif gradient(hi) < 0:
        h_star, rule = hi, "upper boundary"
    else:
        root = _find_root(gradient, lo, hi, cfg)
        residual = abs(gradient(root))
        on_grid = [math.floor(root / ts + 1e-9) * ts, math.ceil(root / ts - 1e-9) * ts]
        candidates = [lo, hi] + [min(max(h, lo), hi) for h in on_grid]
        h_star, _ = _best_of(candidates, objective)
        rule = "root"
    logger.debug("time-shift step at N = %d: h* = %.6g s (%s)", blocklength, h_star, rule)
    return h_star, rule, root, residual


def optimize_time_shift(source, field, link, scheme, cfg=None, blocklength=None):
    """
    Optimal time shift at a fixed blocklength (link.blocklength unless given).

    T_s if the derivative is positive there, (T - tau)/(M - 1) if it is still
    negative there, otherwise the best of the root rounded down/up to the
    symbol grid and both band edges.
    """
    cfg = cfg or OptimizerConfig()
    if scheme.scheme is not Scheme.ASYN_INFER:
        raise InvalidConfigError("time-shift optimization needs an asyn-infer scheme")
    n = int(round(blocklength if blocklength is not None else link.blocklength))
    model = _Objective(source, field, link, scheme)
    h_star, rule, root, residual = _optimize_shift(model, link, scheme, cfg, n)
    value = _finish(source, field, link, scheme, model, n, h_star, rule)
    return OptResult(blocklength=n, shift_s=h_star, mse=value, root=root, residual=residual)


def _project_start(link, scheme, cfg, n, h):
    ts = link.symbol_s
    n_hi = _blocklength_range(link, scheme, cfg, ts)[1]
    n_proj = min(max(n, cfg.n_min), n_hi)
    lo, hi = _shift_band(link, scheme, n_proj)
    return n_proj, min(max(h, lo), hi)


def joint_optimize(source, field, link, scheme, cfg=None):
    """
    Alternate time-shift and blocklength steps for asynchronous inference.

    Each step only moves when it does not raise the objective, so the traced
    MSE never increases. Stops after max_iterations or when both coordinates
    move less than their tolerances.

    Returns:
        OptResult: with the per-iteration trace (iteration 0 is the start)
    """
    cfg = cfg or OptimizerConfig()
    if scheme.scheme is not Scheme.ASYN_INFER:
        raise InvalidConfigError("joint optimization needs an asyn-infer scheme")
    model = _Objective(source, field, link, scheme)
    warnings = _payload_warnings(link)

    n = int(cfg.n_init)
    if cfg.h_init_s is not None:
        h = cfg.h_init_s
    else:
        h = (scheme.period_s - n * link.symbol_s) / (2.0 * (scheme.sensors - 1))
    trace = []
    n_proj, h_proj = _project_start(link, scheme, cfg, n, h)
    note = "start"
    if (n_proj, h_proj) != (n, h):
        message = f"infeasible start (N={n}, h={h:.6g} s) projected to (N={n_proj}, h={h_proj:.6g} s)"
        logger.warning(message)
        warnings.append(message)
        n, h = n_proj, h_proj
        note = "projected start"

    current = model.mse(n, h)
    trace.append(TraceRow(0, h, n, current, abs(model.d_shift(n, h)), abs(model.d_blocklength(n, h)), note))

    converged = False
    iterations = 0
    for i in range(1, cfg.max_iterations + 1):
        iterations = i
        h_prev, n_prev = h, n

        h_new = _optimize_shift(model, link, scheme, cfg, n)[0]
        value = model.mse(n, h_new)
        if value <= current + DESCENT_SLACK:
            h, current = h_new, min(value, current)

        n_new = _optimize_blocklength(model, link, scheme, cfg, h)[0]
        value = model.mse(n_new, h)
        if value <= current + DESCENT_SLACK:
            n, current = n_new, min(value, current)

        trace.append(TraceRow(i, h, n, current, abs(model.d_shift(n, h)), abs(model.d_blocklength(n, h))))
        logger.info("joint iteration %d: h = %.6g s, N = %d, mse = %.6g", i, h, n, current)
        if abs(h - h_prev) < cfg.tol_shift_s and abs(n - n_prev) < cfg.tol_blocklength:
            converged = True
            break

    value = _finish(source, field, link, scheme, model, n, h, "joint")
    return OptResult(blocklength=n, shift_s=h, mse=value, iterations=iterations,
                     converged=converged, trace=trace, warnings=warnings)


def exhaustive_complexity(link, scheme, cfg=None):
    """
    Closed-form count of (N, h) evaluations in the exhaustive search,
    (N_max - N_min)(2T/T_s - N_max - N_min) / (2(M - 1)) with N_max = T/T_s - (M - 1).
    """
    cfg = cfg or OptimizerConfig()
    slots = scheme.period_s / link.symbol_s
    n_max = slots - (scheme.sensors - 1)
    return (n_max - cfg.n_min) * (2.0 * slots - n_max - cfg.n_min) / (2.0 * (scheme.sensors - 1))


def exhaustive_search(source, field, link, scheme, cfg=None, shuffle_seed=None):
    """
    Global minimum over integer N and, for asynchronous inference, every
    time shift on the symbol grid that the constraints allow.

    Ties go to the smaller N, then the smaller h. `shuffle_seed` permutes the
    evaluation order, which must not change the answer.

    Returns:
        OptResult: with `evaluations` set to the number of points scanned
    """
    cfg = cfg or OptimizerConfig()
    model = _Objective(source, field, link, scheme)
    ts = link.symbol_s
    ns, ks, values = [], [], []

    if scheme.scheme is Scheme.ASYN_INFER:
        slots = _slots(scheme.period_s, ts)
        n_hi = _blocklength_range(link, scheme, cfg, ts)[1]
        for n in range(cfg.n_min, n_hi + 1):
            k = np.arange(1, (slots - n) // (scheme.sensors - 1) + 1)
            if k.size == 0:
                continue
            ns.append(np.full(k.size, n))
            ks.append(k)
            values.append(model.mse_over_shifts(n, k * ts))
    else:
        lo, hi = _blocklength_range(link, scheme, cfg)
        for n in range(lo, hi + 1):
            ns.append(np.array([n]))
            ks.append(np.zeros(1, dtype=int))
            values.append(np.array([model.mse(n)]))

    ns, ks, values = np.concatenate(ns), np.concatenate(ks), np.concatenate(values)
    if shuffle_seed is not None:
        perm = np.random.default_rng(shuffle_seed).permutation(values.size)
        ns, ks, values = ns[perm], ks[perm], values[perm]
    best = np.lexsort((ks, ns, values))[0]
    n_star = int(ns[best])
    shift = float(ks[best] * ts) if scheme.scheme is Scheme.ASYN_INFER else None
    logger.info("exhaustive search: %d evaluations, N* = %d, h* = %s", values.size, n_star, shift)

    value = _finish(source, field, link, scheme, model, n_star, shift, "exhaustive")
    return OptResult(blocklength=n_star, shift_s=shift, mse=value, evaluations=int(values.size))


def time_shift_only(source, field, link, scheme, cfg=None):
    """Baseline: optimize only the time shift with N held at cfg.n_init"""
    cfg = cfg or OptimizerConfig()
    return optimize_time_shift(source, field, link.with_blocklength(cfg.n_init), scheme, cfg)


def fixed_blocklength_no_infer(source, link, scheme, cfg=None):
    """Baseline: no inference at N = cfg.n_init"""
    cfg = cfg or OptimizerConfig()
    baseline = scheme.with_changes(scheme=Scheme.NO_INFER, shift_s=None)
    model = _Objective(source, None, link, baseline)
    value = _finish(source, None, link, baseline, model, cfg.n_init, None, "fixed")
    return OptResult(blocklength=cfg.n_init, shift_s=None, mse=value)
