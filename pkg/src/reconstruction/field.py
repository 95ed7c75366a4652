"""
Sensor Field and Source Model
Sensor geometry, separable spatial-temporal correlation and joint Gaussian sampling
"""

import csv
import logging
import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.spatial.distance import pdist, squareform

from .errors import (
    DecompositionError,
    InvalidConfigError,
    InvalidQueryError,
    UndefinedMSSCError,
)

logger = logging.getLogger(__name__)

# Relative diagonal loading applied before Cholesky
COVARIANCE_JITTER = 1e-10


@dataclass(frozen=True)
class SourceParams:
    """
    Parameters of the Gaussian source observed by every sensor.

    Attributes:
        sigma2_x: Sample variance of the target sensor
        gamma_o: Observation SNR sigma2_x / sigma2_v
        a_per_s: Temporal decay rate (1/s)
        b_per_m: Spatial decay rate (1/m)
        sensor_variances: Optional per-sensor variances (1-based order);
            all equal to sigma2_x when omitted
    """
    sigma2_x: float = 1.0
    gamma_o: float = 5.0
    a_per_s: float = 2.0
    b_per_m: float = 0.01
    sensor_variances: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if not (math.isfinite(self.sigma2_x) and self.sigma2_x > 0):
            raise InvalidConfigError(f"sigma2_x must be positive, got {self.sigma2_x}")
        if not (math.isfinite(self.gamma_o) and self.gamma_o > 0):
            raise InvalidConfigError(f"gamma_o must be positive, got {self.gamma_o}")
        if not (math.isfinite(self.a_per_s) and self.a_per_s > 0):
            raise InvalidConfigError(f"a_per_s must be positive, got {self.a_per_s}")
        if not (math.isfinite(self.b_per_m) and self.b_per_m >= 0):
            raise InvalidConfigError(f"b_per_m must be non-negative, got {self.b_per_m}")
        if self.sensor_variances is not None:
            if any(not (v > 0) for v in self.sensor_variances):
                raise InvalidConfigError("sensor_variances must all be positive")
            object.__setattr__(self, "sensor_variances", tuple(float(v) for v in self.sensor_variances))

    @classmethod
    def from_noise_variance(cls, sigma2_x, sigma2_v, a_per_s, b_per_m):
        """Build from sample and observation-noise variances (gamma_o = sigma2_x / sigma2_v)"""
        if not sigma2_v > 0:
            raise InvalidConfigError(f"sigma2_v must be positive, got {sigma2_v}")
        return cls(sigma2_x=sigma2_x, gamma_o=sigma2_x / sigma2_v, a_per_s=a_per_s, b_per_m=b_per_m)

    @property
    def sigma2_v(self):
        return self.sigma2_x / self.gamma_o

    def variance(self, sensor):
        """Sample variance of a sensor (1-based id)"""
        if self.sensor_variances is None:
            return self.sigma2_x
        return self.sensor_variances[sensor - 1]

    def variances(self, count):
        """Vector of per-sensor variances for a field of `count` sensors"""
        if self.sensor_variances is None:
            return np.full(count, self.sigma2_x)
        if len(self.sensor_variances) != count:
            raise InvalidConfigError(
                f"sensor_variances has {len(self.sensor_variances)} entries for {count} sensors"
            )
        return np.asarray(self.sensor_variances, dtype=float)

    def with_changes(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class SensorField:
    """
    Sensor positions and the target sensor the server reconstructs.

    Sensor ids are 1-based throughout the public API; the transmission order
    in asynchronous mode follows the id order.
    """
    positions: np.ndarray
    target: int = 1
    seed: Optional[int] = None
    half_width_m: Optional[float] = None
    density_per_m2: Optional[float] = None

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float, copy=True).reshape(-1, 2)
        if pos.shape[0] < 1:
            raise InvalidConfigError("a sensor field needs at least one sensor")
        if not np.all(np.isfinite(pos)):
            raise InvalidConfigError("sensor positions must be finite")
        if not 1 <= self.target <= pos.shape[0]:
            raise InvalidConfigError(f"target {self.target} outside [1, {pos.shape[0]}]")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def count(self):
        return self.positions.shape[0]

    @cached_property
    def distances(self):
        """Symmetric pairwise distance matrix (m) with zero diagonal"""
        if self.count == 1:
            d = np.zeros((1, 1))
        else:
            d = squareform(pdist(self.positions))
        d.setflags(write=False)
        return d

    def spatial_factors(self, b_per_m):
        """Matrix of e^{-b r_mn}"""
        return np.exp(-b_per_m * self.distances)

    def target_factors(self, b_per_m):
        """Squared spatial factors e^{-2 b r_mn} seen from the target, in id order"""
        return np.exp(-2.0 * b_per_m * self.distances[self.target - 1])

    def with_target(self, target):
        return replace(self, target=target)

    def to_csv(self, path, b_per_m=None):
        """
        Write the field as a header block plus `sensor_id,x_m,y_m` rows.

        Coordinates use 17 significant digits so a read returns the same floats.
        """
        header = {"target": self.target}
        if self.seed is not None:
            header["seed"] = self.seed
        if b_per_m is not None:
            header["b_per_m"] = f"{b_per_m:.17g}"
        if self.half_width_m is not None:
            header["half_width_m"] = f"{self.half_width_m:.17g}"
        if self.density_per_m2 is not None:
            header["density_per_m2"] = f"{self.density_per_m2:.17g}"

        with open(path, "w", newline="") as f:
            for key, value in header.items():
                f.write(f"# {key} = {value}\n")
            writer = csv.writer(f)
            writer.writerow(["sensor_id", "x_m", "y_m"])
            for sensor_id, (x, y) in enumerate(self.positions, start=1):
                writer.writerow([sensor_id, f"{x:.17g}", f"{y:.17g}"])

    @classmethod
    def load_from_csv(cls, path):
        """
        Load a field written by `to_csv`.

        Args:
            path (str): Path to the field file

        Returns:
            SensorField: field with target and seed taken from the header
        """
        header = read_field_header(path)
        rows = []
        with open(path, "r", newline="") as f:
            data_lines = [line for line in f if not line.startswith("#")]
        reader = csv.reader(data_lines)
        next(reader, None)  # Skip header
        for row in reader:
            if not row:
                continue
            rows.append((int(row[0]), float(row[1]), float(row[2])))
        rows.sort()
        if [r[0] for r in rows] != list(range(1, len(rows) + 1)):
            raise InvalidConfigError(f"{path}: sensor ids must be 1..M without gaps")

        def _opt_float(key):
            return float(header[key]) if key in header else None

        return cls(
            positions=[(x, y) for _, x, y in rows],
            target=int(header.get("target", 1)),
            seed=int(header["seed"]) if "seed" in header else None,
            half_width_m=_opt_float("half_width_m"),
            density_per_m2=_opt_float("density_per_m2"),
        )


def read_field_header(path):
    """Return the `# key = value` header block of a field file as a dict of strings"""
    header = {}
    with open(path, "r") as f:
        for line in f:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].partition("=")
            header[key.strip()] = value.strip()
    return header


@dataclass(frozen=True)
class CorrelationQuery:
    """Correlation between two sensors (1-based ids) at a time lag dt (s)"""
    sensor_i: int
    sensor_j: int
    dt: float = 0.0

    def __post_init__(self):
        if not (self.dt >= 0):
            raise InvalidQueryError(f"time lag must be non-negative, got {self.dt}")


def place_sensors(M, region_half_width=10.0, density=None, seed=0, target=1):
    """
    Drop M sensors uniformly in a square centred on the origin.

    This is a homogeneous Poisson point process conditioned on M points. The
    density defaults to M / (pi R^2), where R is the radius of the largest
    circle inside the square.

    Args:
        M (int): Number of sensors
        region_half_width (float): Half side length of the square (m)
        density (float): Recorded HPPP density (1/m^2)
        seed (int): Seed of the placement stream
        target (int): 1-based id of the reconstructed sensor

    Returns:
        SensorField
    """
    if M < 1:
        raise InvalidConfigError(f"need at least one sensor, got M={M}")
    if not region_half_width > 0:
        raise InvalidConfigError(f"region_half_width must be positive, got {region_half_width}")
    if density is None:
        density = M / (math.pi * region_half_width ** 2)

    rng = np.random.default_rng(seed)
    positions = rng.uniform(-region_half_width, region_half_width, size=(M, 2))
    return SensorField(
        positions=positions,
        target=target,
        seed=seed,
        half_width_m=region_half_width,
        density_per_m2=density,
    )


def equidistant_field(M, radius_m, target=1):
    """Target at the origin, the other M-1 sensors evenly spaced on a circle around it"""
    positions = np.zeros((M, 2))
    others = [n for n in range(M) if n != target - 1]
    for k, n in enumerate(others):
        angle = 2.0 * math.pi * k / max(len(others), 1)
        positions[n] = (radius_m * math.cos(angle), radius_m * math.sin(angle))
    return SensorField(positions=positions, target=target)


def correlation(params, field, query):
    """
    Correlation coefficient e^{-a dt - b r_ij} between two sensor samples.

    Args:
        params (SourceParams): Source parameters
        field (SensorField): Sensor geometry
        query (CorrelationQuery): Sensors and lag

    Returns:
        float: Correlation in (0, 1]
    """
    for sensor in (query.sensor_i, query.sensor_j):
        if not 1 <= sensor <= field.count:
            raise InvalidQueryError(f"sensor {sensor} outside [1, {field.count}]")
    r = field.distances[query.sensor_i - 1, query.sensor_j - 1]
    return math.exp(-params.a_per_s * query.dt - params.b_per_m * r)


def mssc(params, field):
    """
    Mean squared spatial correlation seen from the target sensor.

    Average of e^{-2 b r_mn} over all non-target sensors n.
    """
    if field.count < 2:
        raise UndefinedMSSCError(f"MSSC needs at least two sensors, field has {field.count}")
    factors = field.target_factors(params.b_per_m)
    others = np.delete(factors, field.target - 1)
    return float(np.mean(others))


def covariance_matrix(params, field, entries):
    """
    Covariance of X over a list of (sensor, time) entries.

    Cov[X_i(t), X_j(t')] = sigma_i sigma_j e^{-a|t - t'| - b r_ij}
    """
    sensors = np.array([s for s, _ in entries], dtype=int) - 1
    times = np.array([t for _, t in entries], dtype=float)
    if np.any(sensors < 0) or np.any(sensors >= field.count):
        raise InvalidQueryError("sample entry references an unknown sensor")

    sd = np.sqrt(params.variances(field.count))[sensors]
    lag = np.abs(times[:, None] - times[None, :])
    r = field.distances[np.ix_(sensors, sensors)]
    return np.outer(sd, sd) * np.exp(-params.a_per_s * lag - params.b_per_m * r)


class GaussianDraw(NamedTuple):
    """Noise-free samples x and noisy observations y, both shaped (draws, entries)"""
    x: np.ndarray
    y: np.ndarray


def _as_generator(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_joint_gaussian(params, field, sample_times: Sequence[Tuple[int, float]], seed, draws=1):
    """
    Draw the source at the given (sensor, time) pairs and add observation noise.

    Args:
        params (SourceParams): Source parameters
        field (SensorField): Sensor geometry
        sample_times (list): (sensor id, time in s) pairs
        seed: Integer seed or numpy Generator
        draws (int): Number of independent realizations

    Returns:
        GaussianDraw: x and y arrays of shape (draws, len(sample_times))
    """
    if len(sample_times) == 0:
        raise InvalidQueryError("sample_times must not be empty")

    cov = covariance_matrix(params, field, sample_times)
    n = cov.shape[0]
    loaded = cov + COVARIANCE_JITTER * params.sigma2_x * np.eye(n)
    try:
        chol = linalg.cholesky(loaded, lower=True)
    except linalg.LinAlgError as e:
        min_eig = float(np.linalg.eigvalsh(loaded).min())
        raise DecompositionError(
            f"covariance over {n} entries is not positive definite "
            f"(min eigenvalue {min_eig:.3e}): {e}"
        ) from e

    rng = _as_generator(seed)
    x = rng.standard_normal((draws, n)) @ chol.T
    sensors = np.array([s for s, _ in sample_times], dtype=int)
    noise_sd = np.sqrt(params.variances(field.count)[sensors - 1] / params.gamma_o)
    y = x + rng.standard_normal((draws, n)) * noise_sd
    return GaussianDraw(x=x, y=y)
