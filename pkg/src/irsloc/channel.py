"""Multi-tap channel synthesis and frequency-domain OFDM reception.

Each BS receives, on its own sub-carriers, the superposition of three link
families: BS-target-BS direct echoes, the static BS-IRS-BS bounce, and the
BS-IRS-target-BS composed echoes.  Every path deposits one complex gain into
one delay bin of an L-tap baseband channel.  The surface applies a per-element
reflection coefficient that is zero in the first OFDM symbol of a resource
block (surface off) and unit-modulus afterwards, so the first symbol exposes
the direct echoes alone.

Gain model: a path through segments of lengths ``d_1 .. d_j`` gets amplitude
``A0 / prod(d_i)`` with an independent uniform phase per path, fixed for the
whole resource block.  ``A0`` comes from ``SystemConfig.reference_gain``.
Segments are floored at 1 m so degenerate geometry cannot blow up the gain.

Conventions: delay bins are 1-based (bin ``l`` covers samples ``l-1 .. l``),
array indices 0-based; symbol index ``q`` is 0-based with ``q = 0`` the
surface-off symbol.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .scene import (
    PATH_BS_IRS_BS,
    PATH_BS_IRS_TARGET_BS,
    PATH_BS_TARGET_BS,
    Scenario,
    SystemConfig,
    delay_bin,
    distances,
)

_MIN_SEGMENT_M = 1.0

_QPSK = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)


def _segment(d: np.ndarray | float) -> np.ndarray | float:
    return np.maximum(d, _MIN_SEGMENT_M)


@dataclass(frozen=True)
class TapBundle:
    """Ground-truth taps of one trial.

    ``ata[m]`` is the dense L-tap direct-echo channel of BS ``m``.  The
    surface-involved links are stored per element as (bin, gain) pairs:
    ``aia_gains[m, i]`` sits in bin ``aia_bin[m]``, and ``aita_gains[m, i, k]``
    in bin ``aita_bins[m, k]``.
    """

    n_taps: int
    ata: np.ndarray  # (2, L) complex
    ata_bins: np.ndarray  # (2, K) int, 1-based
    aia_bin: np.ndarray  # (2,) int
    aia_gains: np.ndarray  # (2, I) complex
    aita_bins: np.ndarray  # (2, K) int
    aita_gains: np.ndarray  # (2, I, K) complex

    @property
    def n_elements(self) -> int:
        return self.aia_gains.shape[1]

    @property
    def n_targets(self) -> int:
        return self.aita_bins.shape[1]

    def ata_taps(self, m: int) -> np.ndarray:
        return self.ata[m]

    def aia_taps(self, m: int, i: int) -> np.ndarray:
        """Dense L-tap BS-IRS-BS channel through element ``i``."""
        h = np.zeros(self.n_taps, dtype=complex)
        h[self.aia_bin[m] - 1] = self.aia_gains[m, i]
        return h

    def aita_taps(self, m: int, i: int) -> np.ndarray:
        """Dense L-tap BS-IRS-target-BS channel through element ``i``."""
        h = np.zeros(self.n_taps, dtype=complex)
        np.add.at(h, self.aita_bins[m] - 1, self.aita_gains[m, i])
        return h


@dataclass(frozen=True)
class IrsProfile:
    """Reflection coefficients ``phi[i, q]`` of every element per symbol.

    Column 0 is identically zero (surface off); later columns are
    unit-modulus, as a passive surface can only steer phase.
    """

    phi: np.ndarray  # (I, Q) complex

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=complex)
        object.__setattr__(self, "phi", phi)
        if phi.ndim != 2:
            raise ConfigError("phi must be a (n_elements, n_symbols) matrix")
        if np.any(phi[:, 0] != 0):
            raise ConfigError("the surface must be off (phi = 0) in the first symbol")
        if phi.shape[1] > 1 and not np.allclose(np.abs(phi[:, 1:]), 1.0, atol=1e-12):
            raise ConfigError("reflection coefficients must be unit-modulus when on")

    @property
    def n_elements(self) -> int:
        return self.phi.shape[0]

    @property
    def n_symbols(self) -> int:
        return self.phi.shape[1]

    @classmethod
    def random(cls, n_elements: int, n_symbols: int, rng) -> "IrsProfile":
        """Independent uniform unit-modulus coefficients per element per on-symbol."""
        rng = np.random.default_rng(rng)
        phase = rng.uniform(0.0, 2.0 * np.pi, size=(n_elements, n_symbols))
        phi = np.exp(1j * phase)
        phi[:, 0] = 0.0
        return cls(phi=phi)


@dataclass
class ReceivedSignal:
    """Per-BS, per-symbol frequency-domain receptions on owned sub-carriers.

    ``y[m]`` and ``symbols[m]`` are (Q, n_m) arrays.  ``normalized`` divides
    the reception by the transmitted symbols; since symbols are unit-modulus
    this keeps the noise variance at ``noise_var`` per entry.
    """

    y: tuple[np.ndarray, np.ndarray]
    symbols: tuple[np.ndarray, np.ndarray]
    noise_var: float

    def normalized(self, m: int, q: int) -> np.ndarray:
        return self.y[m][q] / self.symbols[m][q]

    def phase1(self, m: int) -> np.ndarray:
        """Symbol-normalized surface-off reception (first symbol)."""
        return self.normalized(m, 0)

    def phase2(self, m: int) -> np.ndarray:
        """(n_m, Q-1) matrix of symbol-normalized surface-on receptions."""
        q_on = self.y[m].shape[0]
        return np.stack([self.normalized(m, q) for q in range(1, q_on)], axis=1)


class DelayDesign:
    """Implicit sub-carrier/delay steering operator ``amplitude * E``.

    ``E`` has entries ``exp(-2j pi nu (l-1) / N)`` over the owned frequency
    indices ``nu`` and delay bins ``l = 1..L``; products against it are
    evaluated with length-N FFTs, never materializing the matrix.
    """

    def __init__(self, subcarriers: np.ndarray, n_fft: int, n_taps: int, amplitude: float = 1.0):
        self.subcarriers = np.asarray(subcarriers, dtype=np.int64)
        self.n_fft = int(n_fft)
        self.n_taps = int(n_taps)
        self.amplitude = float(amplitude)
        self._snorm: float | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.subcarriers), self.n_taps)

    @property
    def column_norm(self) -> float:
        """Common Euclidean norm of every column (entries are unit-modulus)."""
        return self.amplitude * np.sqrt(len(self.subcarriers))

    def matvec(self, h: np.ndarray) -> np.ndarray:
        h = np.asarray(h)
        full = np.fft.fft(h, n=self.n_fft, axis=0)
        return self.amplitude * full[self.subcarriers]

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y)
        z = np.zeros((self.n_fft,) + y.shape[1:], dtype=complex)
        z[self.subcarriers] = y
        return (self.amplitude * self.n_fft) * np.fft.ifft(z, axis=0)[: self.n_taps]

    def to_dense(self) -> np.ndarray:
        nu = self.subcarriers[:, None]
        l0 = np.arange(self.n_taps)[None, :]
        return self.amplitude * np.exp(-2j * np.pi * nu * l0 / self.n_fft)


def build_design(config: SystemConfig, m: int) -> DelayDesign:
    """Measurement operator of BS ``m`` in the symbol-normalized model."""
    return DelayDesign(
        subcarriers=config.subcarrier_indices(m),
        n_fft=config.n_subcarriers,
        n_taps=config.n_taps,
        amplitude=np.sqrt(config.power_per_subcarrier_mw(m)),
    )


def synth_taps(scenario: Scenario, config: SystemConfig, rng_seed) -> TapBundle:
    """Deposit every path's complex gain into its delay bin.

    Raises :class:`DelaySpreadError` when any path's bin exceeds L.  Phases
    are drawn per path from ``rng_seed`` and are fixed across the resource
    block.
    """
    rng = np.random.default_rng(rng_seed)
    truth = distances(scenario)
    k_targets = scenario.n_targets
    n_i = config.n_irs_elements
    a0 = config.reference_gain

    ata_bins = np.empty((2, k_targets), dtype=np.int64)
    aita_bins = np.empty((2, k_targets), dtype=np.int64)
    aia_bin = np.empty(2, dtype=np.int64)
    for m in range(2):
        aia_bin[m] = delay_bin(truth.d_ai[m], PATH_BS_IRS_BS, config)
        for k in range(k_targets):
            ata_bins[m, k] = delay_bin(truth.d_at[m, k], PATH_BS_TARGET_BS, config)
            aita_bins[m, k] = delay_bin(truth.d_aita[m, k], PATH_BS_IRS_TARGET_BS, config)

    theta_ata = rng.uniform(0.0, 2.0 * np.pi, size=(2, k_targets))
    theta_aia = rng.uniform(0.0, 2.0 * np.pi, size=(2, n_i))
    theta_aita = rng.uniform(0.0, 2.0 * np.pi, size=(2, n_i, k_targets))

    ata_amp = a0 / _segment(truth.d_at) ** 2  # (2, K)
    ata = np.zeros((2, config.n_taps), dtype=complex)
    for m in range(2):
        np.add.at(ata[m], ata_bins[m] - 1, ata_amp[m] * np.exp(1j * theta_ata[m]))

    aia_amp = a0 / _segment(truth.d_ai) ** 2  # (2,)
    aia_gains = aia_amp[:, None] * np.exp(1j * theta_aia)

    aita_amp = a0 / (
        _segment(truth.d_ai)[:, None]
        * _segment(truth.d_it)[None, :]
        * _segment(truth.d_at)
    )  # (2, K)
    aita_gains = aita_amp[:, None, :] * np.exp(1j * theta_aita)

    return TapBundle(
        n_taps=config.n_taps,
        ata=ata,
        ata_bins=ata_bins,
        aia_bin=aia_bin,
        aia_gains=aia_gains,
        aita_bins=aita_bins,
        aita_gains=aita_gains,
    )


def compose_channel(taps: TapBundle, irs: IrsProfile, m: int, q: int) -> np.ndarray:
    """Overall L-tap channel of BS ``m`` in symbol ``q`` (0-based).

    Direct taps plus the phase-weighted element sum of the surface links;
    gains sharing a bin add coherently.
    """
    if irs.n_elements != taps.n_elements:
        raise ConfigError("surface profile and tap bundle disagree on element count")
    h = taps.ata[m].astype(complex).copy()
    phi_q = irs.phi[:, q]
    h[taps.aia_bin[m] - 1] += phi_q @ taps.aia_gains[m]
    if taps.n_targets:
        np.add.at(h, taps.aita_bins[m] - 1, phi_q @ taps.aita_gains[m])
    return h


def ofdm_time_signal(symbols: np.ndarray, power_mw: float) -> np.ndarray:
    """Time-domain OFDM samples: unitary inverse DFT of the scaled symbols.

    The unitary convention makes the transform energy-preserving, so
    ``norm(out)**2 == power_mw * norm(symbols)**2``.
    """
    s = np.asarray(symbols, dtype=complex)
    n = len(s)
    return np.sqrt(power_mw) * np.sqrt(n) * np.fft.ifft(s)


def simulate_rx(
    taps: TapBundle, irs: IrsProfile, config: SystemConfig, rng_seed
) -> ReceivedSignal:
    """Frequency-domain receptions of both BSs over all Q symbols.

    Per BS and symbol: ``y = sqrt(p_sc) * s * (E h) + z`` on the owned
    sub-carriers, with unit-modulus QPSK symbols ``s`` and circularly
    symmetric Gaussian noise of per-entry variance ``noise_variance_mw``.
    """
    if irs.n_symbols != config.n_symbols:
        raise ConfigError("surface profile symbol count does not match the config")
    rng = np.random.default_rng(rng_seed)
    sigma2 = config.noise_variance_mw
    q_total = config.n_symbols

    ys = []
    symbols = []
    for m in range(2):
        nu = config.subcarrier_indices(m)
        n_m = len(nu)
        amp = np.sqrt(config.power_per_subcarrier_mw(m))
        s = _QPSK[rng.integers(0, 4, size=(q_total, n_m))]
        y = np.empty((q_total, n_m), dtype=complex)
        for q in range(q_total):
            h = compose_channel(taps, irs, m, q)
            y[q] = amp * s[q] * np.fft.fft(h, n=config.n_subcarriers)[nu]
        if sigma2 > 0:
            z = rng.standard_normal((q_total, n_m)) + 1j * rng.standard_normal(
                (q_total, n_m)
            )
            y += np.sqrt(sigma2 / 2.0) * z
        ys.append(y)
        symbols.append(s)
    return ReceivedSignal(y=(ys[0], ys[1]), symbols=(symbols[0], symbols[1]), noise_var=sigma2)
