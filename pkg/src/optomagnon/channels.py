"""Physical building blocks: unitaries, loss maps, state preparation, click POVMs.

Unitaries are built by exponentiating the truncated generator on the one- or
two-mode subspace they act on (skew-Hermitian generator, so the result is
exactly unitary on the truncated space) and lifting the block into the full
registry as a sparse operator.  The top Fock level of each mode serves as a
guard band: population that would flow past the cutoff is reported as a
truncation estimate, and callers keep working amplitudes below it.

Phase convention: beamsplitters default to the symmetric convention, in
which the reflected amplitude picks up a factor i.  Which detector heralds
which superposition sign downstream depends on this choice; tests assert
signs against this documented convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg

from .fock import (
    DensityOperator,
    FockSpaceError,
    ModeOperator,
    ModeRegistry,
    MultiModeState,
    apply_unitary,
    embed_mode_pair,
    embed_single_mode,
    partial_trace,
    single_mode_annihilation,
)

SYMMETRIC_BS_PHASE = math.pi / 2  # reflected amplitude picks up i

DEFAULT_SQUEEZER_TAIL_BOUND = 1e-5
DEFAULT_COHERENT_TAIL_BOUND = 1e-6


class ChannelError(FockSpaceError):
    """Invalid channel parameters or truncation bound violations."""


class TruncationError(ChannelError):
    """Requested operation would push too much weight past a mode cutoff."""


@dataclass(frozen=True)
class BeamsplitterSpec:
    """Two-mode mixer exp[theta (e^{i phi} a+ b - e^{-i phi} a b+)].

    mixing_angle pi/4 with the default phase gives 50/50 splitting of a
    single photon; relative_phase pi/2 is the symmetric convention.
    """

    mode_a: str
    mode_b: str
    mixing_angle: float = math.pi / 4
    relative_phase: float = SYMMETRIC_BS_PHASE


@dataclass(frozen=True)
class SqueezerSpec:
    """Two-mode squeezer between an optical and a magnon mode.

    tanh^2(r) is the probability of a single pair-creation event, so the
    vacuum maps to amplitudes proportional to (1, tanh r, tanh^2 r, ...) on
    the paired occupations.
    """

    optical_mode: str
    magnon_mode: str
    squeeze_parameter: float

    def __post_init__(self):
        if self.squeeze_parameter < 0:
            raise ChannelError("squeeze_parameter must be >= 0")

    @classmethod
    def from_pair_probability(cls, optical_mode: str, magnon_mode: str, pair_probability: float) -> "SqueezerSpec":
        if not 0.0 <= pair_probability < 1.0:
            raise ChannelError(f"pair probability {pair_probability!r} outside [0, 1)")
        return cls(optical_mode, magnon_mode, math.atanh(math.sqrt(pair_probability)))

    @property
    def pair_probability(self) -> float:
        return math.tanh(self.squeeze_parameter) ** 2


@dataclass(frozen=True)
class SwapSpec:
    """Excitation-exchange coupler; swap_angle pi/2 exchanges the two modes."""

    optical_mode: str
    magnon_mode: str
    swap_angle: float

    def __post_init__(self):
        if not 0.0 <= self.swap_angle <= math.pi / 2:
            raise ChannelError(f"swap_angle {self.swap_angle!r} outside [0, pi/2]")


@dataclass(frozen=True)
class DetectorSpec:
    """Non-number-resolving click detector.

    The no-click POVM element is diagonal with entries
    (1 - efficiency)^n (1 - dark_click_probability); the click element is
    its complement, so the pair is complete by construction.
    """

    efficiency: float = 1.0
    dark_click_probability: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ChannelError(f"efficiency {self.efficiency!r} outside [0, 1]")
        if not 0.0 <= self.dark_click_probability <= 1.0:
            raise ChannelError(f"dark_click_probability {self.dark_click_probability!r} outside [0, 1]")

    def no_click_weights(self, cutoff: int) -> np.ndarray:
        ns = np.arange(cutoff + 1)
        return (1.0 - self.efficiency) ** ns * (1.0 - self.dark_click_probability)


def _pair_ladders(da: int, db: int) -> tuple[np.ndarray, np.ndarray]:
    a = np.kron(single_mode_annihilation(da - 1), np.eye(db))
    b = np.kron(np.eye(da), single_mode_annihilation(db - 1))
    return a, b


def beamsplitter_unitary(spec: BeamsplitterSpec, registry: ModeRegistry) -> ModeOperator:
    """Photon-number-conserving two-mode mixing unitary."""
    if spec.mode_a == spec.mode_b:
        raise ChannelError("beamsplitter needs two distinct modes")
    da = registry.cutoff_of(spec.mode_a) + 1
    db = registry.cutoff_of(spec.mode_b) + 1
    a, b = _pair_ladders(da, db)
    phase = np.exp(1j * spec.relative_phase)
    gen = spec.mixing_angle * (phase * a.conj().T @ b - np.conj(phase) * a @ b.conj().T)
    return embed_mode_pair(registry, spec.mode_a, spec.mode_b, scipy.linalg.expm(gen))


def squeezer_vacuum_tail(spec: SqueezerSpec, registry: ModeRegistry) -> float:
    """Weight an untruncated squeezer would put past the cutoff, from vacuum."""
    c = min(registry.cutoff_of(spec.optical_mode), registry.cutoff_of(spec.magnon_mode))
    return math.tanh(spec.squeeze_parameter) ** (2 * (c + 1))


def two_mode_squeezer_unitary(spec: SqueezerSpec, registry: ModeRegistry,
                              tail_bound: float = DEFAULT_SQUEEZER_TAIL_BOUND) -> ModeOperator:
    """Pair-creation unitary exp[r (a+ m+ - a m)] on the truncated space.

    Raises TruncationError when the vacuum-input weight beyond the cutoff
    would exceed ``tail_bound``; callers read the estimate via
    `squeezer_vacuum_tail`.
    """
    tail = squeezer_vacuum_tail(spec, registry)
    if tail > tail_bound:
        raise TruncationError(
            f"squeezer tail {tail:.3e} exceeds bound {tail_bound:.3e}; raise cutoffs or lower r"
        )
    da = registry.cutoff_of(spec.optical_mode) + 1
    db = registry.cutoff_of(spec.magnon_mode) + 1
    a, m = _pair_ladders(da, db)
    r = spec.squeeze_parameter
    gen = r * (a.conj().T @ m.conj().T - a @ m)
    return embed_mode_pair(registry, spec.optical_mode, spec.magnon_mode, scipy.linalg.expm(gen))


def swap_coupler_unitary(spec: SwapSpec, registry: ModeRegistry) -> ModeOperator:
    """Beamsplitter-type coupling exp[-i theta (a m+ + a+ m)] between modes."""
    da = registry.cutoff_of(spec.optical_mode) + 1
    db = registry.cutoff_of(spec.magnon_mode) + 1
    a, m = _pair_ladders(da, db)
    gen = -1j * spec.swap_angle * (a @ m.conj().T + a.conj().T @ m)
    return embed_mode_pair(registry, spec.optical_mode, spec.magnon_mode, scipy.linalg.expm(gen))


def phase_shift_unitary(mode: str, angle: float, registry: ModeRegistry) -> ModeOperator:
    """Diagonal e^{i n angle} on one mode; occupation probabilities invariant."""
    d = registry.cutoff_of(mode) + 1
    block = np.diag(np.exp(1j * angle * np.arange(d)))
    return embed_single_mode(registry, mode, block)


def _loss_kraus_blocks(cutoff: int, transmissivity: float) -> list[np.ndarray]:
    """Kraus blocks of the pure-loss map: lose k quanta with binomial weight."""
    d = cutoff + 1
    eta = transmissivity
    blocks = []
    for k in range(d):
        block = np.zeros((d, d), dtype=complex)
        for n in range(k, d):
            block[n - k, n] = math.sqrt(math.comb(n, k) * (eta ** (n - k)) * ((1 - eta) ** k))
        blocks.append(block)
    return blocks


def loss_channel(rho: DensityOperator, mode: str, transmissivity: float,
                 method: str = "kraus") -> DensityOperator:
    """Pure-loss map on one mode; trace preserving for any transmissivity.

    The map is defined by mixing the mode with a vacuum environment on a
    beamsplitter with cos^2(theta) = transmissivity and discarding the
    environment.  ``method="dilation"`` runs that construction literally;
    the default ``"kraus"`` applies the equivalent binomial Kraus sum
    without enlarging the space (the two agree to machine precision and are
    cross-checked in the test suite).
    """
    if not 0.0 <= transmissivity <= 1.0:
        raise ChannelError(f"transmissivity {transmissivity!r} outside [0, 1]")
    registry = rho.registry
    cutoff = registry.cutoff_of(mode)
    if transmissivity == 1.0:
        return rho

    if method == "kraus":
        out = np.zeros_like(rho.matrix)
        for block in _loss_kraus_blocks(cutoff, transmissivity):
            kraus = embed_single_mode(registry, mode, block).matrix
            # K rho K+ = K (K rho)+ for Hermitian rho: two sparse-dense products
            out += kraus @ (kraus @ rho.matrix).conj().T
        return DensityOperator(registry, out)

    if method == "dilation":
        env_label = f"env_{mode}"
        big = registry.extended((env_label, cutoff))
        grown = np.kron(rho.matrix, _vacuum_matrix(cutoff))
        big_rho = DensityOperator(big, grown)
        theta = math.acos(math.sqrt(transmissivity))
        bs = beamsplitter_unitary(BeamsplitterSpec(mode, env_label, theta), big)
        mixed = apply_unitary(big_rho, bs)
        return partial_trace(mixed, registry.labels)

    raise ChannelError(f"unknown loss method {method!r}")


def _vacuum_matrix(cutoff: int) -> np.ndarray:
    mat = np.zeros((cutoff + 1, cutoff + 1), dtype=complex)
    mat[0, 0] = 1.0
    return mat


def thermal_truncation_weight(mean_occupation: float, cutoff: int) -> float:
    """Weight of the untruncated geometric distribution past the cutoff."""
    if mean_occupation == 0.0:
        return 0.0
    s = mean_occupation / (mean_occupation + 1.0)
    return s ** (cutoff + 1)


def thermal_state(mean_occupation: float, cutoff: int) -> DensityOperator:
    """Single-mode thermal state, renormalized over the truncated basis."""
    if mean_occupation < 0:
        raise ChannelError(f"mean occupation {mean_occupation!r} must be >= 0")
    registry = ModeRegistry.of(("thermal", cutoff))
    ns = np.arange(cutoff + 1)
    if mean_occupation == 0.0:
        weights = np.zeros(cutoff + 1)
        weights[0] = 1.0
    else:
        s = mean_occupation / (mean_occupation + 1.0)
        weights = (1.0 - s) * s ** ns
        weights = weights / weights.sum()
    return DensityOperator(registry, np.diag(weights.astype(complex)))


def thermal_weights(mean_occupation: float, cutoff: int) -> np.ndarray:
    """Renormalized diagonal of the truncated thermal state."""
    return thermal_state(mean_occupation, cutoff).occupation_probabilities()


def coherent_state(alpha: complex, cutoff: int,
                   tail_bound: float = DEFAULT_COHERENT_TAIL_BOUND) -> MultiModeState:
    """Single-mode coherent state |alpha>, renormalized over the truncation."""
    ns = np.arange(cutoff + 1)
    log_fact = np.cumsum(np.concatenate(([0.0], np.log(np.arange(1, cutoff + 1)))))
    amps = np.exp(-abs(alpha) ** 2 / 2) * np.power(complex(alpha), ns) / np.exp(log_fact / 2)
    retained = float(np.sum(np.abs(amps) ** 2))
    tail = 1.0 - retained
    if tail > tail_bound:
        raise TruncationError(
            f"coherent-state tail {tail:.3e} exceeds bound {tail_bound:.3e}; "
            f"raise the cutoff or reduce |alpha|"
        )
    registry = ModeRegistry.of(("coherent", cutoff))
    return MultiModeState(registry, amps / math.sqrt(retained))


class ClickOutcome(NamedTuple):
    """Result of a click measurement.

    ``rho_click`` is None when the click probability is numerically zero,
    signalling that conditioning on a click would be conditioning on an
    impossible event; callers requesting that branch raise.
    Both post-measurement states have the measured mode traced out; when the
    measured mode was the only one, both states are None and only the
    probabilities remain.
    """

    p_click: float
    rho_click: Optional[DensityOperator]
    rho_noclick: Optional[DensityOperator]


def click_povm_diagonals(rho: DensityOperator, mode: str, spec: DetectorSpec) -> tuple[np.ndarray, np.ndarray]:
    """Full-space diagonals of the no-click and click POVM elements."""
    registry = rho.registry
    axis = registry.axis_of(mode)
    stride = registry.strides[axis]
    d = registry.dims[axis]
    cols = np.arange(registry.dimension)
    n = (cols // stride) % d
    no_click = spec.no_click_weights(d - 1)[n]
    return no_click, 1.0 - no_click


def click_measurement(rho: DensityOperator, mode: str, spec: DetectorSpec,
                      probability_floor: float = 1e-15) -> ClickOutcome:
    """Apply the non-resolving click POVM to one mode and trace it out.

    Returns the click probability and both normalized post-measurement
    states.  Diagonal POVM elements make the state update a row/column
    rescaling by the element's square root.
    """
    no_click_diag, click_diag = click_povm_diagonals(rho, mode, spec)
    diag_rho = rho.occupation_probabilities()
    p_noclick = float(np.dot(diag_rho, no_click_diag))
    p_click = float(np.dot(diag_rho, click_diag))

    keep = [label for label in rho.registry.labels if label != mode]

    def _conditioned(weights: np.ndarray, prob: float) -> Optional[DensityOperator]:
        if prob <= probability_floor or not keep:
            return None
        root = np.sqrt(weights)
        mat = rho.matrix * root[:, None] * root[None, :]
        reduced = partial_trace(DensityOperator(rho.registry, mat), keep)
        return reduced.normalized()

    return ClickOutcome(
        p_click=p_click,
        rho_click=_conditioned(click_diag, p_click),
        rho_noclick=_conditioned(no_click_diag, p_noclick),
    )
