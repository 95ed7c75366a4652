"""
Monte Carlo Oracles
Event-level replay of packet successes with exact per-interval MSE integration,
and a data-level oracle that samples the Gaussian field and applies the MMSE
estimator explicitly
"""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from enum import Enum
from typing import Dict, Optional

import numpy as np

from .analytic import Scheme, instantaneous_mse, slot_advance_probability
from .errors import InvalidConfigError, ScaleLimitError
from .field import sample_joint_gaussian
from .spt import blep_average, blep_instantaneous, blep_segmented

logger = logging.getLogger(__name__)

# Largest joint covariance the data-level oracle factorizes
MAX_DATA_LEVEL_ENTRIES = 2000
STDERR_BATCHES = 32

FADING_STREAM = 0
DECODE_STREAM = 1
FIELD_STREAM = 2


class SuccessModel(str, Enum):
    SEGMENTED = "segmented"
    NORMAL_APPROX = "normal-approx"
    PERFECT = "perfect"


@dataclass(frozen=True)
class TransmissionEvent:
    period: int
    sensor: int
    start_s: float
    gamma_r: float
    success: bool


@dataclass
class ReceiverState:
    """
    What the server holds after the last processed period.

    Attributes:
        latest_generation_s: Generation time of each sensor's newest received
            sample (nan if none yet), id order
        selected_sensor: Sensor whose sample the server currently infers from
        selected_generation_s: Generation time of that sample
    """
    latest_generation_s: np.ndarray
    selected_sensor: Optional[int] = None
    selected_generation_s: Optional[float] = None


@dataclass
class SimReport:
    """
    Time-averaged reconstruction MSE over the horizon between the first and
    the last reception.
    """
    avg_mse: float
    stderr: float
    periods: int
    scheme: Scheme
    aux: Dict[str, object] = dc_field(default_factory=dict)
    total_time_s: float = 0.0
    gaps_s: Optional[np.ndarray] = dc_field(default=None, repr=False)
    slot_advances: Optional[np.ndarray] = dc_field(default=None, repr=False)
    integrals: Optional[np.ndarray] = dc_field(default=None, repr=False)

    @property
    def z_score(self):
        target = self.aux.get("mse_analytic")
        if target is None or not self.stderr > 0:
            return None
        return (self.avg_mse - target) / self.stderr


def _stream(seed, replica, sensor, kind):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replica, sensor, kind)))


def _ratio_stderr(integrals, gaps, batches=STDERR_BATCHES):
    """Batch-means standard error of sum(integrals) / sum(gaps)"""
    count = min(batches, gaps.size // 2)
    if count < 2:
        return float("nan")
    starts = np.linspace(0, gaps.size, count + 1).astype(int)[:-1]
    ratios = np.add.reduceat(integrals, starts) / np.add.reduceat(gaps, starts)
    return float(ratios.std(ddof=1) / math.sqrt(count))


class EventLevelSimulator:
    """
    Replays sampling, fading and decoding period by period.

    Between two receptions the server's MSE is
    sigma2 (1 - c w e^{-2a age}), with c = gamma_o / (gamma_o + 1) and w the
    squared spatial factor of the sample in use, so each interval is
    integrated in closed form. `advance` can be called repeatedly; the
    pending reception carries over, so splitting a horizon does not change
    the result.
    """

    def __init__(self, source, field, link, scheme, seed=0, *,
                 success_model=SuccessModel.SEGMENTED, replica=0, record_trace=False):
        scheme.validate(link)
        if field.count != scheme.sensors:
            raise InvalidConfigError(
                f"field has {field.count} sensors but the scheme expects {scheme.sensors}"
            )
        self.source = source
        self.field = field.with_target(scheme.target)
        self.link = link
        self.scheme = scheme
        self.seed = seed
        self.replica = replica
        self.success_model = SuccessModel(success_model)
        self.record_trace = record_trace

        if scheme.scheme is Scheme.NO_INFER:
            self.active = np.array([scheme.target])
        else:
            self.active = np.arange(1, scheme.sensors + 1)
        self.factors = self.field.target_factors(source.b_per_m)
        self._fading = [_stream(seed, replica, int(s), FADING_STREAM) for s in self.active]
        self._decode = [_stream(seed, replica, int(s), DECODE_STREAM) for s in self.active]

        self.periods_done = 0
        self._pending = None
        self._gaps, self._slots, self._integrals = [], [], []
        self._rx_period, self._rx_sensor = [], []
        self._trace = []
        self._successes = np.zeros(self.active.size, dtype=np.int64)
        self.state = ReceiverState(latest_generation_s=np.full(scheme.sensors, np.nan))

    @property
    def _asyn(self):
        return self.scheme.scheme is Scheme.ASYN_INFER

    def _succeeds(self, gamma, uniform):
        if self.success_model is SuccessModel.PERFECT:
            return np.ones(gamma.shape, dtype=bool)
        if self.success_model is SuccessModel.NORMAL_APPROX:
            eps = blep_instantaneous(self.link, gamma)
        else:
            eps = blep_segmented(self.link, gamma)
        return uniform >= eps

    def generation_time(self, period, sensor):
        offset = (sensor - 1) * self.scheme.shift_s if self._asyn else 0.0
        return period * self.scheme.period_s + offset

    def advance(self, periods):
        """Simulate `periods` more periods"""
        if periods < 1:
            raise InvalidConfigError(f"periods must be at least 1, got {periods}")
        ks = np.arange(self.periods_done, self.periods_done + periods)
        success = np.empty((periods, self.active.size), dtype=bool)
        gammas = np.empty((periods, self.active.size))
        for col in range(self.active.size):
            gain = self._fading[col].standard_exponential(periods)
            uniform = self._decode[col].random(periods)
            gammas[:, col] = np.maximum(self.link.snr_avg * gain, np.finfo(float).tiny)
            success[:, col] = self._succeeds(gammas[:, col], uniform)
        self._successes += success.sum(axis=0)
        if self.record_trace:
            self._trace.append((ks, gammas, success))

        if self._asyn:
            rows, cols = np.nonzero(success)
            rx_period, rx_sensor = ks[rows], self.active[cols]
        else:
            scores = np.where(success, self.factors[self.active - 1][None, :], -np.inf)
            best = np.argmax(scores, axis=1)
            rows = np.nonzero(success.any(axis=1))[0]
            rx_period, rx_sensor = ks[rows], self.active[best[rows]]

        self._close_intervals(rx_period, rx_sensor)
        self._update_state(ks, success)
        self.periods_done += periods
        return self

    def _close_intervals(self, rx_period, rx_sensor):
        self._rx_period.append(rx_period)
        self._rx_sensor.append(rx_sensor)
        if self._pending is not None:
            rx_period = np.concatenate(([self._pending[0]], rx_period))
            rx_sensor = np.concatenate(([self._pending[1]], rx_sensor))
        if rx_period.size == 0:
            return
        self._pending = (int(rx_period[-1]), int(rx_sensor[-1]))
        if rx_period.size < 2:
            return

        T = self.scheme.period_s
        if self._asyn:
            slot = rx_period * self.scheme.sensors + (rx_sensor - 1)
            gap = np.diff(rx_period) * T + np.diff(rx_sensor) * self.scheme.shift_s
        else:
            slot = rx_period
            gap = np.diff(rx_period) * T
        a = self.source.a_per_s
        gamma = self.source.gamma_o
        w = self.factors[rx_sensor[:-1] - 1]
        held = gamma / (gamma + 1.0) * w * math.exp(-2.0 * a * self.link.delay_s)
        integral = self.source.variance(self.scheme.target) * (gap - held * -np.expm1(-2.0 * a * gap) / (2.0 * a))

        self._gaps.append(gap)
        self._slots.append(np.diff(slot))
        self._integrals.append(integral)

    def _update_state(self, ks, success):
        for col, sensor in enumerate(self.active):
            hits = np.nonzero(success[:, col])[0]
            if hits.size:
                self.state.latest_generation_s[sensor - 1] = self.generation_time(int(ks[hits[-1]]), sensor)
        if self._pending is not None:
            period, sensor = self._pending
            self.state.selected_sensor = sensor
            self.state.selected_generation_s = self.generation_time(period, sensor)

    def receptions(self):
        """(period, sensor) of every reception so far, in time order"""
        if not self._rx_period:
            return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
        return np.concatenate(self._rx_period), np.concatenate(self._rx_sensor)

    def trace_events(self):
        """Yield every transmission in period order (needs record_trace)"""
        for ks, gammas, success in self._trace:
            for row, k in enumerate(ks):
                for col, sensor in enumerate(self.active):
                    yield TransmissionEvent(
                        period=int(k),
                        sensor=int(sensor),
                        start_s=self.generation_time(int(k), int(sensor)),
                        gamma_r=float(gammas[row, col]),
                        success=bool(success[row, col]),
                    )

    def report(self):
        gaps = np.concatenate(self._gaps) if self._gaps else np.zeros(0)
        slots = np.concatenate(self._slots) if self._slots else np.zeros(0, dtype=int)
        integrals = np.concatenate(self._integrals) if self._integrals else np.zeros(0)
        rates = self._successes / max(self.periods_done, 1)
        return _build_report(self.source, self.link, self.scheme, self.periods_done,
                             gaps, slots, integrals, {"success_rate": tuple(float(r) for r in rates)})


def _build_report(source, link, scheme, periods, gaps, slots, integrals, extra):
    total = float(gaps.sum())
    if gaps.size == 0:
        logger.warning("no complete inter-reception interval in %d periods", periods)
        avg = float("nan")
    else:
        avg = float(integrals.sum()) / total
    aux = {
        "eps_bar": blep_average(link),
        "intervals": int(gaps.size),
        "mean_gap_s": float(gaps.mean()) if gaps.size else float("nan"),
        "mean_decay": float(np.exp(-2.0 * source.a_per_s * gaps).mean()) if gaps.size else float("nan"),
        "period_decay": math.exp(-2.0 * source.a_per_s * scheme.period_s),
    }
    aux.update(extra)
    return SimReport(
        avg_mse=avg,
        stderr=_ratio_stderr(integrals, gaps),
        periods=periods,
        scheme=scheme.scheme,
        aux=aux,
        total_time_s=total,
        gaps_s=gaps,
        slot_advances=slots,
        integrals=integrals,
    )


def simulate_event_level(source, field, link, scheme, periods, seed, *,
                         success_model=SuccessModel.SEGMENTED, replica=0):
    """
    Event-level Monte Carlo estimate of the average MSE.

    Args:
        source (SourceParams): Source parameters
        field (SensorField): Sensor geometry
        link (LinkParams): Link parameters
        scheme (SchemeConfig): Scheme and timing
        periods (int): Number of transmission periods
        seed (int): Root seed; streams are split per (replica, sensor)
        success_model (SuccessModel): How decoding success is drawn

    Returns:
        SimReport
    """
    sim = EventLevelSimulator(source, field, link, scheme, seed,
                              success_model=success_model, replica=replica)
    return sim.advance(periods).report()


def merge_reports(reports, source, link, scheme):
    """Pool replica reports; the average is weighted by each replica's horizon"""
    gaps = np.concatenate([r.gaps_s for r in reports])
    slots = np.concatenate([r.slot_advances for r in reports])
    integrals = np.concatenate([r.integrals for r in reports])
    merged = _build_report(source, link, scheme, sum(r.periods for r in reports),
                           gaps, slots, integrals, {"replicas": len(reports)})
    total = merged.total_time_s
    if total > 0 and not any(math.isnan(r.stderr) for r in reports):
        merged.stderr = math.sqrt(sum((r.total_time_s / total) ** 2 * r.stderr ** 2 for r in reports))
    return merged


def simulate_replicas(source, field, link, scheme, periods, seed, *, replicas=1, threads=1,
                      success_model=SuccessModel.SEGMENTED):
    """Run independent replicas, in a thread pool when threads > 1, and merge them in replica order"""
    if replicas < 1:
        raise InvalidConfigError(f"replicas must be at least 1, got {replicas}")

    def run(replica):
        return simulate_event_level(source, field, link, scheme, periods, seed,
                                    success_model=success_model, replica=replica)

    if threads > 1 and replicas > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(run, range(replicas)))
    else:
        reports = [run(r) for r in range(replicas)]
    if replicas == 1:
        return reports[0]
    return merge_reports(reports, source, link, scheme)


def mmse_estimate(source, field, sensor, age_s, y):
    """
    MMSE estimate of the target from a noisy sample of `sensor` taken `age_s` earlier.

    X_hat = sigma_m gamma_o rho Y / (sigma_j (gamma_o + 1))
    """
    target = field.target
    r = field.distances[target - 1, sensor - 1]
    rho = np.exp(-source.a_per_s * np.asarray(age_s) - source.b_per_m * r)
    ratio = math.sqrt(source.variance(target)) / np.sqrt(source.variances(field.count)[np.asarray(sensor) - 1])
    gamma = source.gamma_o
    return ratio * gamma * rho * y / (gamma + 1.0)


def simulate_data_level(source, field, link, scheme, periods, seed, *, draws=1000,
                        grid_per_period=16, success_model=SuccessModel.SEGMENTED, replica=0):
    """
    Data-level oracle on the event trace of the same seed.

    Samples the joint Gaussian field at every used sample and at target
    evaluation instants, reconstructs with the MMSE estimator and averages the
    squared error over the evaluation grid and the draws.

    Returns:
        SimReport: aux carries "model_mse" (the instantaneous-MSE formula
        averaged over the same grid) and "event_level_mse"
    """
    sim = EventLevelSimulator(source, field, link, scheme, seed,
                              success_model=success_model, replica=replica)
    sim.advance(periods)
    rx_period, rx_sensor = sim.receptions()
    if rx_period.size < 2:
        raise InvalidConfigError(f"fewer than two receptions in {periods} periods")

    target = scheme.target
    tau = link.delay_s
    generated = np.array([sim.generation_time(int(k), int(s)) for k, s in zip(rx_period, rx_sensor)])
    arrival = generated + tau
    step = scheme.period_s / grid_per_period
    grid = np.arange(arrival[0] + 0.5 * step, arrival[-1], step)
    used = np.searchsorted(arrival, grid, side="right") - 1

    samples = np.unique(used)
    entries = [(int(rx_sensor[i]), float(generated[i])) for i in samples]
    entries += [(target, float(t)) for t in grid]
    if len(entries) > MAX_DATA_LEVEL_ENTRIES:
        logger.error("data-level run needs %d covariance entries (limit %d)",
                     len(entries), MAX_DATA_LEVEL_ENTRIES)
        raise ScaleLimitError(
            f"{len(entries)} joint samples exceed the limit of {MAX_DATA_LEVEL_ENTRIES}; "
            "reduce periods or grid_per_period"
        )

    rng = _stream(seed, replica, 0, FIELD_STREAM)
    draw = sample_joint_gaussian(source, sim.field, entries, rng, draws=draws)
    column = np.searchsorted(samples, used)
    sensors = rx_sensor[used]
    ages = grid - generated[used]
    estimate = mmse_estimate(source, sim.field, sensors, ages, draw.y[:, column])
    truth = draw.x[:, samples.size:]
    per_draw = ((truth - estimate) ** 2).mean(axis=1)

    model = np.array([instantaneous_mse(source, sim.field, int(s), age) for s, age in zip(sensors, ages)])
    event = sim.report()
    return SimReport(
        avg_mse=float(per_draw.mean()),
        stderr=float(per_draw.std(ddof=1) / math.sqrt(draws)) if draws > 1 else float("nan"),
        periods=periods,
        scheme=scheme.scheme,
        aux={
            "model_mse": float(model.mean()),
            "event_level_mse": event.avg_mse,
            "grid_points": int(grid.size),
            "entries": len(entries),
        },
        total_time_s=float(arrival[-1] - arrival[0]),
    )


def empirical_reception_stats(report, scheme, eps_bar=None, max_slots=None):
    """
    Compare inter-reception statistics of an event-level run with their closed forms.

    Asynchronous runs: gaps between consecutive receptions, the law of how
    many transmission slots separate them, and its residue classes modulo M.
    Synchronous runs: gaps between successful periods and E[e^{-2aD}].

    Returns:
        dict: empirical and expected values side by side
    """
    q = float(report.aux["eps_bar"] if eps_bar is None else eps_bar)
    M = scheme.sensors
    T = scheme.period_s
    gaps, slots = report.gaps_s, report.slot_advances
    stats = {"eps_bar": q, "intervals": int(gaps.size), "mean_gap_s": float(gaps.mean())}

    if scheme.scheme is Scheme.ASYN_INFER:
        stats["mean_gap_expected_s"] = T / (M * (1.0 - q))
        per_slot = q
        residues = (slots - 1) % M + 1
        stats["residue_pmf"] = [
            (r, float(np.mean(residues == r)), q ** (r - 1) * (1.0 - q) / (1.0 - q ** M))
            for r in range(1, M + 1)
        ]
    else:
        active = 1 if scheme.scheme is Scheme.NO_INFER else M
        per_slot = q ** active
        decay_T = report.aux["period_decay"]
        stats["mean_gap_expected_s"] = T / (1.0 - per_slot)
        stats["mean_decay"] = report.aux["mean_decay"]
        stats["mean_decay_expected"] = decay_T * (1.0 - per_slot) / (1.0 - decay_T * per_slot)

    top = int(max_slots or max(int(slots.max()) if slots.size else 1, 1))
    stats["slot_pmf"] = [
        (k, float(np.mean(slots == k)), slot_advance_probability(per_slot, k))
        for k in range(1, top + 1)
    ]
    return stats


TRACE_COLUMNS = ["period", "sensor", "t_start_s", "gamma_r", "success"]


def write_trace(path, events):
    """Write transmission events as CSV"""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRACE_COLUMNS)
        for e in events:
            writer.writerow([e.period, e.sensor, f"{e.start_s:.12g}", f"{e.gamma_r:.12g}", int(e.success)])
