"""
Synthetic ultrasonic guided-wave measurements and their envelope signals.

A collocated transducer at p emits a Hann-windowed toneburst. Each plate edge
returns a first-order echo that travels straight from the image source of p
across that edge. Propagation uses the scalar transfer function
g(r, w) = exp(-j k(w) r) / sqrt(k(w) r) in the frequency domain.

The envelope e(d) is the magnitude of the analytic signal of the normalized
correlation between a measurement and the single-reflection template at
distance d, over a uniform grid of distances.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from numpy.polynomial import polynomial
from scipy.fft import irfft, rfft, rfftfreq
from scipy.optimize import nnls
from scipy.signal import find_peaks, hilbert
from scipy.signal.windows import hann

from ..core.exceptions import EmptyMeasurementError, InvalidArgumentError, NoEchoError
from ..core.models import PlateConfig, UgwConfig
from ..utils.seeding import module_rng

logger = logging.getLogger(__name__)

CLAMP_WARN_LEVEL = 1e-3
ECHO_REFINE = 4
ECHO_WINDOW = 0.15  # [m] searched beyond the nearest envelope peak
ECHO_FRACTION = 0.3


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def next_pow2(n: int) -> int:
    return 1 << max(0, int(np.ceil(np.log2(max(n, 1)))))


@dataclass(frozen=True)
class PlateScene:
    """Convex plate boundary, vertices in counter-clockwise order."""
    polygon: np.ndarray

    def __post_init__(self):
        poly = np.array(self.polygon, dtype=float)
        if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
            raise InvalidArgumentError(f"plate polygon must have at least 3 2-D vertices, got shape {poly.shape}")
        edges = np.roll(poly, -1, axis=0) - poly
        turns = _cross(edges, np.roll(edges, -1, axis=0))
        if np.any(turns <= 0):
            raise InvalidArgumentError("plate polygon must be convex and counter-clockwise")
        poly.flags.writeable = False
        object.__setattr__(self, "polygon", poly)

    @classmethod
    def rectangle(cls, width: float, height: float) -> "PlateScene":
        return cls(np.array([[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]]))

    @classmethod
    def from_config(cls, config: PlateConfig) -> "PlateScene":
        if config.polygon:
            return cls(np.array(config.polygon, dtype=float))
        return cls.rectangle(config.width, config.height)

    @property
    def edges(self):
        """(start, end) vertex arrays, one row per edge."""
        return self.polygon, np.roll(self.polygon, -1, axis=0)

    @property
    def bounds(self):
        return self.polygon.min(axis=0), self.polygon.max(axis=0)

    @property
    def diagonal(self) -> float:
        lo, hi = self.bounds
        return float(np.hypot(*(hi - lo)))

    @property
    def perimeter(self) -> float:
        start, end = self.edges
        return float(np.sum(np.linalg.norm(end - start, axis=1)))

    def contains(self, points, strict: bool = True) -> np.ndarray:
        """Inside test for (M, 2) points: on the left of every CCW edge."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        start, end = self.edges
        side = _cross((end - start)[None, :, :], pts[:, None, :] - start[None, :, :])
        return np.all(side > 0 if strict else side >= 0, axis=1)

    def boundary_points(self, gap: float) -> np.ndarray:
        """Points along the boundary about gap apart, every vertex included."""
        out = []
        for a, b in zip(*self.edges):
            n = max(1, int(np.ceil(np.linalg.norm(b - a) / gap)))
            t = np.arange(n) / n
            out.append(a + t[:, None] * (b - a))
        return np.concatenate(out)


def image_sources(scene: PlateScene, p) -> np.ndarray:
    """First-order image sources of p, one per edge: p mirrored across the edge line."""
    p = np.asarray(p, dtype=float)
    if not scene.contains(p)[0]:
        raise InvalidArgumentError(f"source {p.tolist()} is not strictly inside the plate")
    start, end = scene.edges
    direction = end - start
    normal = np.column_stack([-direction[:, 1], direction[:, 0]])
    normal /= np.linalg.norm(normal, axis=1, keepdims=True)
    offset = np.sum((p - start) * normal, axis=1)
    return p - 2.0 * offset[:, None] * normal


def distance_step(cfg: UgwConfig) -> float:
    """Envelope grid spacing: one eighth of the wavelength at the centre frequency."""
    return cfg.group_velocity / (4.0 * cfg.center_freq * 2.0)


def sample_count(cfg: UgwConfig) -> int:
    return int(round(cfg.duration * cfg.sample_rate))


def toneburst(cfg: UgwConfig) -> np.ndarray:
    n = int(round(cfg.burst_cycles / cfg.center_freq * cfg.sample_rate))
    t = np.arange(n) / cfg.sample_rate
    return hann(n, sym=False) * np.sin(2 * np.pi * cfg.center_freq * t)


def fft_length(cfg: UgwConfig) -> int:
    return next_pow2(sample_count(cfg) + len(toneburst(cfg)))


def wavenumber(cfg: UgwConfig, omega: np.ndarray) -> np.ndarray:
    if cfg.dispersion:
        return polynomial.polyval(omega, cfg.dispersion)
    return omega / cfg.group_velocity


def transfer(cfg: UgwConfig, r, omega: np.ndarray) -> np.ndarray:
    """g(r, w) for distances r (any shape) against the frequency axis; 0 where k(w) <= 0."""
    r = np.asarray(r, dtype=float)[..., None]
    k = wavenumber(cfg, omega)
    live = k > 0
    safe_k = np.where(live, k, 1.0)
    g = np.exp(-1j * safe_k * r) / np.sqrt(safe_k * r)
    return np.where(live, g, 0.0)


def _propagate(cfg: UgwConfig, r) -> np.ndarray:
    """Time signals for burst travel over each distance in r, shape r.shape + (n_samples,)."""
    n_fft = fft_length(cfg)
    omega = 2 * np.pi * rfftfreq(n_fft, d=1.0 / cfg.sample_rate)
    spectrum = rfft(toneburst(cfg), n_fft)
    return irfft(transfer(cfg, r, omega) * spectrum, n_fft, axis=-1)[..., :sample_count(cfg)]


def synthesize_measurement(scene: PlateScene, p, cfg: UgwConfig,
                           rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Sum of first-order echoes at p plus white Gaussian noise at cfg.snr_db (none when snr_db is None)."""
    images = image_sources(scene, p)
    r = np.maximum(np.linalg.norm(images - np.asarray(p, dtype=float), axis=1), distance_step(cfg))
    z = _propagate(cfg, r).sum(axis=0)
    if cfg.snr_db is not None:
        rng = rng if rng is not None else np.random.default_rng()
        noise_power = np.mean(z ** 2) / 10.0 ** (cfg.snr_db / 10.0)
        z = z + rng.normal(0.0, np.sqrt(noise_power), size=z.shape)
    return z


@dataclass(frozen=True)
class EnvelopeSignal:
    distances: np.ndarray
    values: np.ndarray

    @property
    def step(self) -> float:
        return float(self.distances[1] - self.distances[0])

    def at(self, d) -> np.ndarray:
        """Linear interpolation, 0 beyond the grid."""
        return np.interp(d, self.distances, self.values, left=0.0, right=0.0)


class TemplateBank:
    """Unit-norm single-reflection templates over the envelope distance grid, refine times finer on request."""

    def __init__(self, cfg: UgwConfig, d_max: float, refine: int = 1):
        if refine < 1:
            raise InvalidArgumentError(f"refine must be >= 1, got {refine}")
        self.cfg = cfg
        step = distance_step(cfg)
        self.distances = np.arange(0.0, d_max + 0.5 * step / refine, step / refine)
        templates = _propagate(cfg, np.maximum(2.0 * self.distances, step))
        templates /= np.linalg.norm(templates, axis=1, keepdims=True)
        templates.flags.writeable = False
        self.templates = templates
        self.burst_length = len(toneburst(cfg))

    @classmethod
    def for_config(cls, cfg: UgwConfig, d_max: float, refine: int = 1) -> "TemplateBank":
        return _cached_bank(cfg.model_dump_json(), float(d_max), int(refine))

    def __len__(self):
        return len(self.distances)


@lru_cache(maxsize=8)
def _cached_bank(cfg_json: str, d_max: float, refine: int = 1) -> TemplateBank:
    return TemplateBank(UgwConfig.model_validate_json(cfg_json), d_max, refine)


def envelope(z, cfg: UgwConfig, d_max: float, bank: Optional[TemplateBank] = None,
             logger: logging.Logger = logger) -> EnvelopeSignal:
    """
    Raises:
        EmptyMeasurementError: if z has zero energy.
    """
    bank = bank or TemplateBank.for_config(cfg, d_max)
    z = np.asarray(z, dtype=float)
    if len(z) < bank.burst_length:
        raise InvalidArgumentError(f"measurement has {len(z)} samples, shorter than the burst ({bank.burst_length})")
    norm = np.linalg.norm(z)
    if not np.isfinite(norm) or norm == 0.0:
        raise EmptyMeasurementError()

    correlation = bank.templates[:, :len(z)] @ z / norm
    analytic = hilbert(correlation, N=next_pow2(len(correlation)))[:len(correlation)]
    values = np.abs(analytic)
    overshoot = float(values.max() - 1.0)
    if overshoot > 0:
        if overshoot > CLAMP_WARN_LEVEL:
            logger.warning(f"Envelope clamped to 1 (overshoot {overshoot:.3e})")
        else:
            logger.debug(f"Envelope clamped to 1 (overshoot {overshoot:.3e})")
    return EnvelopeSignal(distances=bank.distances, values=np.clip(values, 0.0, 1.0))


def first_echo_distance(e: EnvelopeSignal, threshold: float = 0.4, prominence: float = 0.1) -> float:
    """
    Distance of the nearest envelope peak with height >= threshold and
    prominence >= prominence, refined by a parabola through its neighbours.

    Raises:
        NoEchoError: if no peak qualifies.
    """
    # a leading zero lets a peak at the first sample qualify
    peaks, _ = find_peaks(np.concatenate([[0.0], e.values]), height=threshold, prominence=prominence)
    peaks = peaks - 1
    if len(peaks) == 0:
        raise NoEchoError(threshold, prominence)
    i = int(peaks[0])
    d = float(e.distances[i])
    if 0 < i < len(e.values) - 1:
        left, mid, right = e.values[i - 1:i + 2]
        curvature = left - 2.0 * mid + right
        if curvature < 0:
            d += 0.5 * (left - right) / curvature * e.step
    return d


def resolve_first_echo(z, cfg: UgwConfig, d_max: float, threshold: float = 0.4, prominence: float = 0.1,
                       fraction: float = ECHO_FRACTION, e: Optional[EnvelopeSignal] = None,
                       logger: logging.Logger = logger) -> float:
    """
    First-echo distance with overlapping echoes pulled apart.

    The nearest envelope peak only bounds the search: the measurement up to the
    arrival from that distance plus ECHO_WINDOW is decomposed by non-negative
    least squares over unit-norm templates on a grid ECHO_REFINE times finer
    than the envelope's. The first pair of neighbouring templates holding at
    least fraction of the largest pair weight is the nearest echo, placed at
    the weighted centroid of the templates around it.

    Raises:
        NoEchoError: if the envelope has no qualifying peak.
    """
    z = np.asarray(z, dtype=float)
    e = e if e is not None else envelope(z, cfg, d_max, logger=logger)
    coarse = first_echo_distance(e, threshold, prominence)
    bank = TemplateBank.for_config(cfg, d_max, refine=ECHO_REFINE)

    d_hi = coarse + ECHO_WINDOW
    atoms = np.flatnonzero(bank.distances <= d_hi)
    arrival = int(round(2.0 * d_hi / cfg.group_velocity * cfg.sample_rate))
    n = min(len(z), bank.templates.shape[1], max(bank.burst_length, arrival))
    weights, residual = nnls(bank.templates[atoms, :n].T, z[:n], maxiter=20 * len(atoms))
    pairs = weights[:-1] + weights[1:]
    if pairs.size == 0 or pairs.max() <= 0:
        return coarse

    k = int(np.argmax(pairs >= fraction * pairs.max()))
    around = slice(max(k - 1, 0), k + 3)
    d = float(np.average(bank.distances[atoms[around]], weights=weights[around]))
    logger.debug(f"First echo at {d:.4f} m (envelope peak {coarse:.4f} m, "
                 f"{np.count_nonzero(weights)} active templates, residual {residual:.3e})")
    return d


def grid_positions(scene: PlateScene, rows: int, cols: int, margin: float) -> np.ndarray:
    """rows x cols regular measurement grid inset by margin, row-major (rows*cols, 2)."""
    lo, hi = scene.bounds
    if np.any(hi - lo <= 2 * margin):
        raise InvalidArgumentError(f"margin {margin} leaves no room inside the plate")
    xs = np.linspace(lo[0] + margin, hi[0] - margin, cols)
    ys = np.linspace(lo[1] + margin, hi[1] - margin, rows)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def simulate_grid_measurements(scene: PlateScene, cfg: UgwConfig, seed: int):
    """Measurements at every grid position, each noise draw from its own seeded stream."""
    positions = grid_positions(scene, cfg.grid_rows, cfg.grid_cols, cfg.grid_margin)
    measurements = np.stack([
        synthesize_measurement(scene, p, cfg, rng=module_rng(seed, "ugw.noise", i))
        for i, p in enumerate(positions)
    ])
    return positions, measurements


def grid_envelopes(measurements, cfg: UgwConfig, d_max: float, logger: logging.Logger = logger):
    bank = TemplateBank.for_config(cfg, d_max)
    return [envelope(z, cfg, d_max, bank=bank, logger=logger) for z in measurements]
