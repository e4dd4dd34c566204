"""Scene geometry, system configuration, and delay-bin arithmetic.

Anchors are two base stations (BS 1, BS 2) plus one passive reflecting
surface (IRS), all at known 2-D coordinates.  Targets are passive reflectors.
Every propagation path maps to one tap of an L-tap discrete baseband channel;
the tap index ("delay bin", 1-based) quantizes the path length:

* round-trip paths (BS-target-BS, BS-IRS-BS) have bin width  c0 / (2 N df)
  on the one-way distance, and
* composed one-way path lengths (BS-IRS-target-BS) have bin width c0 / (N df),

where N df is the channel bandwidth.  All distances are in meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import CongestedSceneError, ConfigError, DelaySpreadError

# Propagation speed used throughout the simulator (common sim convention).
SPEED_OF_LIGHT = 3.0e8  # m/s

#: Path kinds accepted by :func:`delay_bin`.
PATH_BS_TARGET_BS = "bs-target-bs"
PATH_BS_IRS_BS = "bs-irs-bs"
PATH_BS_IRS_TARGET_BS = "bs-irs-target-bs"

_ROUND_TRIP_KINDS = (PATH_BS_TARGET_BS, PATH_BS_IRS_BS)

# Relative snap tolerance: a distance within ~1e-12 of an exact bin boundary
# counts as the boundary, so exact multiples deterministically go to the
# lower bin regardless of float rounding in upstream sums.
_BIN_SNAP = 1e-12


def dbm_to_mw(x_dbm: float) -> float:
    return 10.0 ** (x_dbm / 10.0)


def mw_to_dbm(p_mw: float) -> float:
    return 10.0 * math.log10(p_mw)


@dataclass(frozen=True)
class Point2D:
    """A point in the 2-D plane, meters."""

    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ConfigError(f"coordinates must be finite, got ({self.x}, {self.y})")

    def distance_to(self, other: "Point2D") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Placement:
    """Anchor layout and the target-sampling disc."""

    bs1: Point2D = Point2D(-100.0, 0.0)
    bs2: Point2D = Point2D(100.0, 0.0)
    irs: Point2D = Point2D(0.0, 40.0)
    radius_m: float = 50.0

    def __post_init__(self):
        if self.radius_m <= 0:
            raise ConfigError(f"sampling radius must be positive, got {self.radius_m}")


DEFAULT_PLACEMENT = Placement()


@dataclass(frozen=True)
class Scenario:
    """Anchor and target coordinates for one trial.

    The two BS positions must be distinct and the IRS must not be collocated
    with either BS, otherwise the anchors cannot triangulate.  ``targets`` may
    be empty when synthesizing anchor-only channels; the localization pipeline
    itself requires at least one target.
    """

    bs: tuple[Point2D, Point2D]
    irs: Point2D
    targets: tuple[Point2D, ...]

    def __post_init__(self):
        object.__setattr__(self, "bs", tuple(self.bs))
        object.__setattr__(self, "targets", tuple(self.targets))
        if len(self.bs) != 2:
            raise ConfigError("exactly two base stations are required")
        b1, b2 = self.bs
        if (b1.x, b1.y) == (b2.x, b2.y):
            raise ConfigError("the two base stations must not be collocated")
        for m, b in enumerate(self.bs):
            if (b.x, b.y) == (self.irs.x, self.irs.y):
                raise ConfigError(f"IRS must not be collocated with BS {m + 1}")

    @property
    def n_targets(self) -> int:
        return len(self.targets)

    def anchor_array(self) -> np.ndarray:
        """(3, 2) array of anchor coordinates: BS 1, BS 2, IRS."""
        return np.array([[p.x, p.y] for p in (*self.bs, self.irs)])


@dataclass(frozen=True)
class SystemConfig:
    """OFDM, power, noise, IRS, and gain-model parameters.

    ``tx_power_mw`` is the *total* transmit power of one BS; each of its
    owned sub-carriers radiates ``tx_power_mw / n_owned`` mW.  The gain
    reference ``gain_ref`` is the path amplitude at 1 m; when ``None`` it is
    calibrated so that a BS-target-BS path at ``gain_ref_distance_m`` gives a
    per-tap estimation SNR of ``gain_ref_snr_db`` at the reference power and
    reference noise density (full-band matched filter).
    """

    n_subcarriers: int = 2048
    subcarrier_spacing_hz: float = 195312.5
    n_symbols: int = 7
    tx_power_mw: float = dbm_to_mw(39.0)
    noise_psd_mw_per_hz: float = dbm_to_mw(-174.0)
    n_irs_elements: int = 1024
    n_taps: int = 512
    carrier_freq_hz: float = 28e9  # reserved for physical gain models
    allocation: str = "interleaved"
    custom_allocation: tuple[tuple[int, ...], tuple[int, ...]] | None = None
    gain_ref: float | None = None
    gain_ref_snr_db: float = 25.0
    gain_ref_power_dbm: float = 39.0
    gain_ref_distance_m: float = 100.0
    gain_ref_noise_psd_mw_per_hz: float = dbm_to_mw(-174.0)

    def __post_init__(self):
        if self.n_subcarriers < 2:
            raise ConfigError("n_subcarriers must be at least 2")
        if self.subcarrier_spacing_hz <= 0:
            raise ConfigError("subcarrier spacing must be positive")
        if self.n_symbols < 2:
            raise ConfigError(
                "n_symbols must be >= 2 (one IRS-off symbol plus at least one IRS-on symbol)"
            )
        if self.tx_power_mw <= 0:
            raise ConfigError("tx_power_mw must be positive")
        if self.noise_psd_mw_per_hz < 0:
            raise ConfigError("noise PSD must be nonnegative")
        if self.n_irs_elements < 1:
            raise ConfigError("at least one IRS element is required")
        if not 1 <= self.n_taps <= self.n_subcarriers:
            raise ConfigError("n_taps must satisfy 1 <= L <= N")
        if self.allocation not in ("interleaved", "contiguous", "custom"):
            raise ConfigError(f"unknown allocation mode {self.allocation!r}")
        if self.allocation == "custom":
            self._validate_custom_allocation()
        elif self.custom_allocation is not None:
            raise ConfigError("custom_allocation given but allocation mode is not 'custom'")

    def _validate_custom_allocation(self):
        if self.custom_allocation is None:
            raise ConfigError("allocation mode 'custom' requires custom_allocation")
        n1, n2 = (set(s) for s in self.custom_allocation)
        if n1 & n2:
            raise ConfigError("allocation sets overlap: N_1 and N_2 must be disjoint")
        if n1 | n2 != set(range(1, self.n_subcarriers + 1)):
            raise ConfigError("allocation sets must partition {1..N}")
        if not n1 or not n2:
            raise ConfigError("each BS must own at least one sub-carrier")

    @property
    def bandwidth_hz(self) -> float:
        return self.n_subcarriers * self.subcarrier_spacing_hz

    @property
    def noise_variance_mw(self) -> float:
        """Per-sub-carrier noise variance (thermal PSD times sub-carrier spacing)."""
        return self.noise_psd_mw_per_hz * self.subcarrier_spacing_hz

    @property
    def round_trip_bin_m(self) -> float:
        """Bin width on the one-way distance of a round-trip path."""
        return SPEED_OF_LIGHT / (2.0 * self.bandwidth_hz)

    @property
    def one_way_bin_m(self) -> float:
        """Bin width on the total length of a composed one-way path."""
        return SPEED_OF_LIGHT / self.bandwidth_hz

    @cached_property
    def _allocation_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.n_subcarriers
        if self.allocation == "interleaved":
            # 1-based odd sub-carriers to BS 1, even to BS 2.
            n1 = np.arange(0, n, 2)
            n2 = np.arange(1, n, 2)
        elif self.allocation == "contiguous":
            half = (n + 1) // 2
            n1 = np.arange(0, half)
            n2 = np.arange(half, n)
        else:
            c1, c2 = self.custom_allocation
            n1 = np.asarray(sorted(c1), dtype=np.int64) - 1
            n2 = np.asarray(sorted(c2), dtype=np.int64) - 1
        return n1, n2

    def subcarrier_indices(self, m: int) -> np.ndarray:
        """0-based frequency indices owned by BS ``m`` (0 or 1), ascending."""
        return self._allocation_arrays[m]

    def n_owned(self, m: int) -> int:
        return len(self.subcarrier_indices(m))

    def power_per_subcarrier_mw(self, m: int) -> float:
        return self.tx_power_mw / self.n_owned(m)

    @property
    def reference_gain(self) -> float:
        """Resolved path amplitude at 1 m (explicit value or SNR calibration)."""
        if self.gain_ref is not None:
            return self.gain_ref
        sigma2 = self.gain_ref_noise_psd_mw_per_hz * self.subcarrier_spacing_hz
        p_ref = dbm_to_mw(self.gain_ref_power_dbm)
        snr = dbm_to_mw(self.gain_ref_snr_db)  # dB -> linear
        return math.sqrt(snr * sigma2 / p_ref) * self.gain_ref_distance_m**2


@dataclass(frozen=True)
class RangeTruth:
    """True path lengths of a scenario.

    ``d_at[m, k]`` BS m to target k, ``d_ai[m]`` BS m to IRS, ``d_it[k]`` IRS
    to target k, and ``d_aita[m, k] = d_ai[m] + d_it[k] + d_at[m, k]`` the
    composed BS-IRS-target-BS path length.
    """

    d_at: np.ndarray
    d_ai: np.ndarray
    d_it: np.ndarray
    d_aita: np.ndarray


def distances(scenario: Scenario) -> RangeTruth:
    """Euclidean anchor-target distances and composed path lengths."""
    anchors = scenario.anchor_array()
    bs = anchors[:2]
    irs = anchors[2]
    if scenario.n_targets:
        t = np.array([[p.x, p.y] for p in scenario.targets])
    else:
        t = np.zeros((0, 2))
    d_at = np.linalg.norm(t[None, :, :] - bs[:, None, :], axis=2)
    d_ai = np.linalg.norm(irs[None, :] - bs, axis=1)
    d_it = np.linalg.norm(t - irs[None, :], axis=1)
    d_aita = d_ai[:, None] + d_it[None, :] + d_at
    return RangeTruth(d_at=d_at, d_ai=d_ai, d_it=d_it, d_aita=d_aita)


def delay_bin_width(path_kind: str, config: SystemConfig) -> float:
    """Bin width in meters for the given path kind."""
    if path_kind in _ROUND_TRIP_KINDS:
        return config.round_trip_bin_m
    if path_kind == PATH_BS_IRS_TARGET_BS:
        return config.one_way_bin_m
    raise ValueError(f"unknown path kind {path_kind!r}")


def delay_bin(distance: float, path_kind: str, config: SystemConfig) -> int:
    """1-based delay bin of a path, lower bin on exact boundaries.

    ``distance`` is the one-way anchor distance for round-trip kinds and the
    total composed path length for the BS-IRS-target-BS kind.  Raises
    :class:`DelaySpreadError` when the bin exceeds the configured tap count.
    """
    if not distance > 0:
        raise ValueError(f"distance must be positive, got {distance}")
    width = delay_bin_width(path_kind, config)
    q = distance / width
    l = max(1, int(math.ceil(q * (1.0 - _BIN_SNAP))))
    if l > config.n_taps:
        raise DelaySpreadError(
            f"scene exceeds delay spread: {path_kind} path of {distance:.3f} m "
            f"needs bin {l} > L = {config.n_taps}"
        )
    return l


def _target_bins(
    points: np.ndarray, placement: Placement, config: SystemConfig
) -> np.ndarray:
    """(4, K) bin indices: BS1/BS2 direct round-trip, BS1/BS2 composed."""
    scen = Scenario(
        bs=(placement.bs1, placement.bs2),
        irs=placement.irs,
        targets=tuple(Point2D(x, y) for x, y in points),
    )
    truth = distances(scen)
    k = points.shape[0]
    bins = np.empty((4, k), dtype=np.int64)
    for j in range(k):
        bins[0, j] = delay_bin(truth.d_at[0, j], PATH_BS_TARGET_BS, config)
        bins[1, j] = delay_bin(truth.d_at[1, j], PATH_BS_TARGET_BS, config)
        bins[2, j] = delay_bin(truth.d_aita[0, j], PATH_BS_IRS_TARGET_BS, config)
        bins[3, j] = delay_bin(truth.d_aita[1, j], PATH_BS_IRS_TARGET_BS, config)
    return bins


def _scene_resolvable(
    bins: np.ndarray, l_aia: Sequence[int], min_separation: int
) -> bool:
    """Check that every estimated range set will hold one entry per target.

    Within each of the four range dimensions, target bins must be pairwise
    separated by at least ``min_separation``.  Additionally a composed-path
    bin must not coincide with any same-BS direct-path bin nor with the
    static BS-IRS-BS bin: such taps overlap in the channel and the composed
    range of the affected target could not be read back out.
    """
    for row in bins:
        srt = np.sort(row)
        if len(srt) > 1 and np.min(np.diff(srt)) < min_separation:
            return False
    for m in range(2):
        composed = bins[2 + m]
        if np.intersect1d(composed, bins[m]).size:
            return False
        if l_aia[m] in composed:
            return False
    return True


def sample_scenario(
    rng_seed,
    k_targets: int,
    placement: Placement = DEFAULT_PLACEMENT,
    config: SystemConfig | None = None,
    min_bin_separation: int = 1,
    max_attempts: int = 1000,
) -> Scenario:
    """Draw ``k_targets`` uniform over the disc around the IRS.

    Layouts are redrawn until the scene is resolvable per
    :func:`_scene_resolvable`, so each of the four range sets of an ideal
    detector contains exactly one entry per target.  Deterministic in
    ``rng_seed`` (an int, a SeedSequence, or a Generator).
    """
    if k_targets < 1:
        raise ValueError(f"k_targets must be >= 1, got {k_targets}")
    if config is None:
        config = SystemConfig()
    rng = np.random.default_rng(rng_seed)
    center = placement.irs.as_array()
    l_aia = [
        delay_bin(placement.bs1.distance_to(placement.irs), PATH_BS_IRS_BS, config),
        delay_bin(placement.bs2.distance_to(placement.irs), PATH_BS_IRS_BS, config),
    ]
    for _ in range(max_attempts):
        r = placement.radius_m * np.sqrt(rng.random(k_targets))
        theta = 2.0 * np.pi * rng.random(k_targets)
        pts = center + np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
        try:
            bins = _target_bins(pts, placement, config)
        except DelaySpreadError:
            raise
        if _scene_resolvable(bins, l_aia, min_bin_separation):
            return Scenario(
                bs=(placement.bs1, placement.bs2),
                irs=placement.irs,
                targets=tuple(Point2D(x, y) for x, y in pts),
            )
    raise CongestedSceneError(
        f"congested scene: no resolvable layout for K={k_targets} "
        f"within {max_attempts} attempts"
    )
