"""The heralded two-station entanglement protocol as exact Fock-space pipelines.

Entangling stage
    A weak pulse is split on a 50/50 beamsplitter and pumps one scattering
    site per interferometer arm.  The pump is carried classically (its mean
    photon number and phase per arm), while the scattered optical mode and
    the magnon mode of each arm are simulated exactly: a two-mode squeezer
    whose pair probability is (pump photons in that arm) x (per-photon
    scattering probability) creates correlated photon/magnon pairs.  The
    scattered fields interfere on a second 50/50 beamsplitter and a click
    on exactly one detector heralds a shared single-magnon state; which
    detector fired fixes the superposition sign.

Thermal occupation
    Imperfect ground-state cooling leaves each magnon mode with mean
    occupation nbar.  Two treatments are available.  The default,
    ``mixture_overlay``, books residual excitations as a classical mixture
    over initial occupation sectors whose quanta ride along unchanged; it
    reproduces the closed-form contaminated state and its fidelity
    1/(1 + 2S + S^2) with S = nbar/(nbar + 1).  The alternative,
    ``squeezed_thermal``, seeds the squeezers with true thermal states, so
    pair creation is bosonically stimulated by the residual occupation;
    the heralded fidelity then drops to roughly (1 - S)^3.  The two differ
    at first order in S; `consistency_check_thermal` quantifies the gap.

Read-out stage
    A swap coupler converts each magnon mode into an anti-Stokes optical
    mode, arm A picks up a configurable phase offset, and the two fields
    interfere on a closing 50/50 beamsplitter.  Cross-correlations between
    the Stokes and anti-Stokes detectors over unconditioned runs feed the
    entanglement witness: for any separable pair of magnon modes the
    witness ratio stays at or above one, so a dip below one certifies
    entanglement.

Conventions (fixed and asserted by tests): all beamsplitters use the
symmetric convention (reflection picks up i); the pump phase acquired on
reflection propagates into the pair amplitude of arm B; detector 1 then
heralds the minus superposition and detector 2 the plus superposition.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.constants

from .channels import (
    BeamsplitterSpec,
    DetectorSpec,
    SqueezerSpec,
    SwapSpec,
    beamsplitter_unitary,
    click_measurement,
    loss_channel,
    phase_shift_unitary,
    squeezer_vacuum_tail,
    swap_coupler_unitary,
    thermal_weights,
    two_mode_squeezer_unitary,
)
from .fock import (
    ANTISTOKES_A,
    ANTISTOKES_B,
    MAGNON_A,
    MAGNON_B,
    STOKES_A,
    STOKES_B,
    DensityOperator,
    FockSpaceError,
    ModeRegistry,
    MultiModeState,
    apply_unitary,
    build_basis,
    embed_single_mode,
    fidelity_with_pure,
    partial_trace,
)

# Which superposition sign each herald detector projects onto, under the
# symmetric beamsplitter convention with the pump entering port A.
HERALD_SIGN_OF_DETECTOR = {1: -1, 2: +1}

# Constant in the consistency bound trace_distance <= C * max(p, P, S^2).
CONSISTENCY_DISTANCE_CONSTANT = 2.0

REGIME_LIMIT = 0.1

# Largest density-matrix dimension a pipeline stage may allocate; the four
# active modes at the default cutoffs use 256.
PIPELINE_MAX_DIMENSION = 65536


class ProtocolError(FockSpaceError):
    """Invalid protocol configuration or impossible conditioning."""


class HeraldError(ProtocolError):
    """Herald probability below the configured floor: nothing to condition on."""


class ZeroIntensityError(ProtocolError):
    """A witness intensity vanished (no Stokes light or no anti-Stokes light)."""


class ProtocolRegimeWarning(UserWarning):
    """Pulse or scattering probability outside the weak-excitation regime."""


def mean_thermal_occupation(frequency_hz: float, temperature_k: float) -> float:
    """Bose-Einstein occupation 1/(exp(h nu / k T) - 1) at the given frequency."""
    if frequency_hz <= 0:
        raise ProtocolError(f"frequency must be positive, got {frequency_hz!r}")
    if temperature_k <= 0:
        raise ProtocolError(f"temperature must be positive, got {temperature_k!r}")
    x = scipy.constants.h * frequency_hz / (scipy.constants.k * temperature_k)
    return 1.0 / math.expm1(x)


@dataclass(frozen=True)
class PhysicalCouplings:
    """Device-level rates, kept for documentation only.

    The pipelines work with the derived knobs (scattering probability,
    swap angle), so none of these enter any computation.
    """

    single_photon_coupling_hz: Optional[float] = None
    write_pump_photons: Optional[float] = None
    read_pump_photons: Optional[float] = None
    write_effective_coupling_hz: Optional[float] = None
    read_effective_coupling_hz: Optional[float] = None
    optical_frequency_te_hz: Optional[float] = None
    optical_frequency_tm_hz: Optional[float] = None


@dataclass(frozen=True)
class ProtocolConfig:
    """All physical and numerical parameters of one experiment.

    Defaults reproduce the reference operating point: a 7 GHz magnon mode
    at 100 mK, pulse mean photon number 0.01 and per-photon scattering
    probability 0.01, ideal optics and detectors, weak read-out.
    """

    pulse_mean_photons: float = 0.01
    stokes_probability: float = 0.01
    stokes_probability_b: Optional[float] = None  # asymmetric device knob
    magnon_frequency_hz: float = 7.0e9
    temperature_k: float = 0.1
    nbar_override: Optional[float] = None  # takes precedence over temperature
    propagation_transmissivity_a: float = 1.0
    propagation_transmissivity_b: float = 1.0
    detector: DetectorSpec = field(default=DetectorSpec())
    read_phase_rad: float = math.pi / 2
    read_swap_angle_rad: float = 0.2
    herald_detector_index: int = 1
    optical_cutoff: int = 3
    magnon_cutoff: int = 3
    rng_seed: int = 12345
    thermal_model: str = "mixture_overlay"  # or "squeezed_thermal"
    magnon_decay_delay_ratio: float = 0.0  # (pulse delay)/(magnon lifetime)
    herald_floor: float = 1e-12
    witness_divergence_epsilon: float = 1e-8
    couplings: Optional[PhysicalCouplings] = None

    def __post_init__(self):
        if self.pulse_mean_photons < 0:
            raise ProtocolError("pulse_mean_photons must be >= 0")
        for name in ("stokes_probability", "stokes_probability_b"):
            value = getattr(self, name)
            if value is None:
                continue
            if not 0.0 <= value <= 1.0:
                raise ProtocolError(f"{name} must lie in [0, 1], got {value!r}")
        if self.magnon_frequency_hz <= 0:
            raise ProtocolError("magnon_frequency_hz must be positive")
        if self.temperature_k < 0:
            raise ProtocolError("temperature_k must be >= 0")
        if self.nbar_override is not None and self.nbar_override < 0:
            raise ProtocolError("nbar_override must be >= 0")
        for name in ("propagation_transmissivity_a", "propagation_transmissivity_b"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ProtocolError(f"{name} must lie in [0, 1]")
        if self.herald_detector_index not in (1, 2):
            raise ProtocolError("herald_detector_index must be 1 or 2")
        if not 0.0 <= self.read_swap_angle_rad <= math.pi / 2:
            raise ProtocolError("read_swap_angle_rad must lie in [0, pi/2]")
        if self.optical_cutoff < 1 or self.magnon_cutoff < 1:
            raise ProtocolError("cutoffs must be >= 1")
        stage_dimension = ((self.optical_cutoff + 1) * (self.magnon_cutoff + 1)) ** 2
        if stage_dimension > PIPELINE_MAX_DIMENSION:
            raise ProtocolError(
                f"cutoffs give a stage dimension of {stage_dimension}, above the "
                f"limit {PIPELINE_MAX_DIMENSION}; lower the cutoffs")
        if self.thermal_model not in ("mixture_overlay", "squeezed_thermal"):
            raise ProtocolError(f"unknown thermal_model {self.thermal_model!r}")
        if self.magnon_decay_delay_ratio < 0:
            raise ProtocolError("magnon_decay_delay_ratio must be >= 0")
        if self.pulse_mean_photons > REGIME_LIMIT:
            warnings.warn(
                f"pulse_mean_photons = {self.pulse_mean_photons} is outside the weak-pulse "
                f"regime (<< 1); higher-order photon terms grow",
                ProtocolRegimeWarning, stacklevel=2)
        if self.stokes_probability > REGIME_LIMIT:
            warnings.warn(
                f"stokes_probability = {self.stokes_probability} is outside the "
                f"single-scattering regime (<< 1)",
                ProtocolRegimeWarning, stacklevel=2)

    @property
    def mean_thermal_magnons(self) -> float:
        """Resolved nbar: the override if given, else from the temperature."""
        if self.nbar_override is not None:
            return self.nbar_override
        if self.temperature_k == 0.0:
            return 0.0
        return mean_thermal_occupation(self.magnon_frequency_hz, self.temperature_k)

    @property
    def thermal_ratio(self) -> float:
        nbar = self.mean_thermal_magnons
        return nbar / (nbar + 1.0)

    @property
    def pair_probability_a(self) -> float:
        """Pair-creation probability in arm A: half the pulse photons scatter with probability P."""
        return 0.5 * self.pulse_mean_photons * self.stokes_probability

    @property
    def pair_probability_b(self) -> float:
        p_b = self.stokes_probability_b if self.stokes_probability_b is not None else self.stokes_probability
        return 0.5 * self.pulse_mean_photons * p_b

    def magnon_registry(self) -> ModeRegistry:
        return ModeRegistry.of((MAGNON_A, self.magnon_cutoff), (MAGNON_B, self.magnon_cutoff))


@dataclass(frozen=True)
class HeraldedState:
    """Conditional two-magnon state after a successful herald."""

    rho_magnons: DensityOperator
    herald_probability: float
    herald_sign: int
    truncation_error: float


@dataclass(frozen=True)
class WitnessPoint:
    """Witness evaluation at one read phase for one Stokes detector."""

    delta_phi: float
    stokes_detector: int
    g2_a1: float
    g2_a2: float
    r_m: float
    divergent: bool
    g2_a1_error: Optional[float] = None
    g2_a2_error: Optional[float] = None
    r_m_error: Optional[float] = None
    n_trials: Optional[int] = None


def ideal_target_state(sign: int, magnon_cutoff: int = 3) -> MultiModeState:
    """Path-entangled single-magnon state (|01> + sign |10>)/sqrt(2)."""
    if sign not in (+1, -1):
        raise ProtocolError("sign must be +1 or -1")
    registry = ModeRegistry.of((MAGNON_A, magnon_cutoff), (MAGNON_B, magnon_cutoff))
    idx = build_basis(registry)
    amps = np.zeros(registry.dimension, dtype=complex)
    amps[idx.index_of((0, 1))] = 1.0 / math.sqrt(2.0)
    amps[idx.index_of((1, 0))] = sign / math.sqrt(2.0)
    return MultiModeState(registry, amps)


def closed_form_fidelity(thermal_ratio: float) -> float:
    """Fidelity of the thermally contaminated heralded state to the target."""
    s = thermal_ratio
    return 1.0 / (1.0 + 2.0 * s + s * s)


def thermal_final_state(thermal_ratio: float, sign: int, magnon_cutoff: int = 3) -> DensityOperator:
    """Closed-form heralded state with residual thermal magnons.

    Mixture of the target state and its copies shifted up by the initial
    occupations, with weights 1 : S : S : S^2 for the four low sectors.
    """
    s = thermal_ratio
    if not 0.0 <= s < 1.0:
        raise ProtocolError(f"thermal ratio {s!r} outside [0, 1)")
    if sign not in (+1, -1):
        raise ProtocolError("sign must be +1 or -1")
    if magnon_cutoff < 2:
        raise ProtocolError("magnon_cutoff must be >= 2 to hold the contaminated sectors")
    registry = ModeRegistry.of((MAGNON_A, magnon_cutoff), (MAGNON_B, magnon_cutoff))
    idx = build_basis(registry)

    def superposition(lo: tuple[int, int], hi: tuple[int, int]) -> np.ndarray:
        amps = np.zeros(registry.dimension, dtype=complex)
        amps[idx.index_of(lo)] = 1.0 / math.sqrt(2.0)
        amps[idx.index_of(hi)] = sign / math.sqrt(2.0)
        return amps

    components = [
        (1.0, superposition((0, 1), (1, 0))),
        (s, superposition((0, 2), (1, 1))),
        (s, superposition((1, 1), (2, 0))),
        (s * s, superposition((1, 2), (2, 1))),
    ]
    mat = np.zeros((registry.dimension, registry.dimension), dtype=complex)
    for weight, amps in components:
        mat += weight * np.outer(amps, amps.conj())
    return DensityOperator(registry, mat / np.trace(mat))


# ---------------------------------------------------------------------------
# Entangling stage


@dataclass(frozen=True)
class EntangleFrontState:
    """Unconditioned optical/magnon state just before the herald detectors.

    Mode order: Stokes detector-1 port, Stokes detector-2 port, magnon A,
    magnon B.  ``truncation_estimate`` collects squeezer tails, thermal
    bookkeeping leakage and any trace drift.
    """

    rho: DensityOperator
    truncation_estimate: float


def _pump_split(pulse_mean_photons: float) -> tuple[complex, complex]:
    """Classical pump amplitudes per arm after the symmetric 50/50 splitter."""
    alpha = math.sqrt(pulse_mean_photons)
    return alpha / math.sqrt(2.0), 1j * alpha / math.sqrt(2.0)


def _shift_block(cutoff: int, steps: int) -> np.ndarray:
    """|n> -> |n + steps| with unit amplitude; drops weight past the cutoff."""
    d = cutoff + 1
    block = np.zeros((d, d), dtype=complex)
    for n in range(d - steps):
        block[n + steps, n] = 1.0
    return block


def _apply_thermal_overlay(rho: DensityOperator, nbar: float,
                           labels: Sequence[str]) -> tuple[DensityOperator, float]:
    """Classical-mixture bookkeeping of residual thermal occupation.

    Each magnon mode independently starts with n quanta with geometric
    weight (1-S) S^n; those quanta ride along unchanged on top of the
    protocol state (no bosonic stimulation).  Weight pushed past a cutoff
    is dropped and reported.
    """
    registry = rho.registry
    out = np.zeros_like(rho.matrix)
    shifted = {}
    for label in labels:
        cutoff = registry.cutoff_of(label)
        weights = _geometric_weights(nbar, cutoff)
        shifted[label] = [
            (w, embed_single_mode(registry, label, _shift_block(cutoff, n)).matrix)
            for n, w in enumerate(weights) if w > 0.0
        ]
    label_a, label_b = labels
    for w_a, v_a in shifted[label_a]:
        for w_b, v_b in shifted[label_b]:
            lifted = v_a @ (v_b @ rho.matrix @ v_b.conj().T) @ v_a.conj().T
            out += (w_a * w_b) * lifted
    retained = float(np.trace(out).real)
    leak = max(0.0, 1.0 - retained)
    return DensityOperator(registry, out / retained), leak


def _geometric_weights(nbar: float, cutoff: int) -> np.ndarray:
    if nbar == 0.0:
        weights = np.zeros(cutoff + 1)
        weights[0] = 1.0
        return weights
    s = nbar / (nbar + 1.0)
    return (1.0 - s) * s ** np.arange(cutoff + 1)


def entangle_front_state(config: ProtocolConfig) -> EntangleFrontState:
    """Run the entangling optics up to (not including) the herald detectors."""
    co, cm = config.optical_cutoff, config.magnon_cutoff
    registry = ModeRegistry.of(
        (STOKES_A, co), (STOKES_B, co), (MAGNON_A, cm), (MAGNON_B, cm))

    nbar = config.mean_thermal_magnons
    seeded_thermal = config.thermal_model == "squeezed_thermal" and nbar > 0.0
    if seeded_thermal:
        vac = np.zeros((co + 1, co + 1), dtype=complex)
        vac[0, 0] = 1.0
        th = np.diag(thermal_weights(nbar, cm).astype(complex))
        rho = DensityOperator.product(registry, [vac, vac, th, th])
    else:
        rho = MultiModeState.vacuum(registry).to_density()

    alpha_a, alpha_b = _pump_split(config.pulse_mean_photons)
    truncation = 0.0
    for stokes, magnon, pair_prob, pump in (
        (STOKES_A, MAGNON_A, config.pair_probability_a, alpha_a),
        (STOKES_B, MAGNON_B, config.pair_probability_b, alpha_b),
    ):
        if pair_prob == 0.0:
            continue
        spec = SqueezerSpec.from_pair_probability(stokes, magnon, pair_prob)
        truncation += squeezer_vacuum_tail(spec, registry)
        rho = apply_unitary(rho, two_mode_squeezer_unitary(spec, registry))
        # the scattered field inherits the pump phase, shifted by the
        # -i of the interaction generator
        pair_phase = np.angle(pump) - math.pi / 2.0
        if pair_phase != 0.0:
            rho = apply_unitary(rho, phase_shift_unitary(stokes, pair_phase, registry))

    if config.propagation_transmissivity_a < 1.0:
        rho = loss_channel(rho, STOKES_A, config.propagation_transmissivity_a)
    if config.propagation_transmissivity_b < 1.0:
        rho = loss_channel(rho, STOKES_B, config.propagation_transmissivity_b)

    rho = apply_unitary(rho, beamsplitter_unitary(BeamsplitterSpec(STOKES_A, STOKES_B), registry))

    if nbar > 0.0 and not seeded_thermal:
        rho, leak = _apply_thermal_overlay(rho, nbar, (MAGNON_A, MAGNON_B))
        truncation += leak
    elif seeded_thermal:
        truncation += 2.0 * (nbar / (nbar + 1.0)) ** (cm + 1)

    drift = abs(rho.trace - 1.0)
    truncation += drift
    if drift > 0:
        rho = rho.normalized()
    return EntangleFrontState(rho=rho, truncation_estimate=truncation)


def entangle_stage(config: ProtocolConfig) -> HeraldedState:
    """Herald on a single click and return the conditional two-magnon state.

    Conditions on the configured detector clicking while the other stays
    silent (double clicks are discarded), then traces out the consumed
    optical modes.
    """
    front = entangle_front_state(config)
    herald_mode = STOKES_A if config.herald_detector_index == 1 else STOKES_B
    silent_mode = STOKES_B if config.herald_detector_index == 1 else STOKES_A

    first = click_measurement(front.rho, herald_mode, config.detector)
    if first.rho_click is None or first.p_click < config.herald_floor:
        raise HeraldError(
            f"herald probability {first.p_click:.3e} below floor {config.herald_floor:.1e}; "
            f"no pulse or no scattering to condition on")
    second = click_measurement(first.rho_click, silent_mode, config.detector)
    herald_probability = first.p_click * (1.0 - second.p_click)
    if second.rho_noclick is None or herald_probability < config.herald_floor:
        raise HeraldError(
            f"herald probability {herald_probability:.3e} below floor {config.herald_floor:.1e}")

    return HeraldedState(
        rho_magnons=second.rho_noclick,
        herald_probability=herald_probability,
        herald_sign=HERALD_SIGN_OF_DETECTOR[config.herald_detector_index],
        truncation_error=front.truncation_estimate,
    )


# ---------------------------------------------------------------------------
# Read-out stage


def _read_registry(config: ProtocolConfig) -> ModeRegistry:
    return ModeRegistry.of(
        (MAGNON_A, config.magnon_cutoff), (MAGNON_B, config.magnon_cutoff),
        (ANTISTOKES_A, config.optical_cutoff), (ANTISTOKES_B, config.optical_cutoff))


class _ReadOptics:
    """Phase-independent part of the read pipeline, built once and reused.

    Acts on the four-mode registry (magnon A, magnon B, anti-Stokes A,
    anti-Stokes B).  Per read phase only a diagonal phase and the closing
    beamsplitter remain; losses commute with the phase shift so they are
    folded into the fixed part.
    """

    def __init__(self, config: ProtocolConfig):
        self.config = config
        self.registry = _read_registry(config)
        theta = config.read_swap_angle_rad
        self.swap_a = swap_coupler_unitary(SwapSpec(ANTISTOKES_A, MAGNON_A, theta), self.registry)
        self.swap_b = swap_coupler_unitary(SwapSpec(ANTISTOKES_B, MAGNON_B, theta), self.registry)
        self.closing_bs = beamsplitter_unitary(
            BeamsplitterSpec(ANTISTOKES_A, ANTISTOKES_B), self.registry)
        self._anti_a_numbers = self._mode_numbers(ANTISTOKES_A)

    def _mode_numbers(self, label: str) -> np.ndarray:
        axis = self.registry.axis_of(label)
        cols = np.arange(self.registry.dimension)
        return (cols // self.registry.strides[axis]) % self.registry.dims[axis]

    def extend_magnon_state(self, rho_magnons: np.ndarray) -> np.ndarray:
        """Adjoin vacuum anti-Stokes modes to a two-magnon matrix."""
        co = self.config.optical_cutoff
        vac = np.zeros(((co + 1) ** 2, (co + 1) ** 2), dtype=complex)
        vac[0, 0] = 1.0
        return np.kron(rho_magnons, vac)

    def fixed_evolution(self, rho_magnons: np.ndarray) -> np.ndarray:
        """Swap conversion and losses; everything that is read-phase independent."""
        cfg = self.config
        rho = DensityOperator(self.registry, self.extend_magnon_state(rho_magnons))
        if cfg.magnon_decay_delay_ratio > 0.0:
            survival = math.exp(-cfg.magnon_decay_delay_ratio)
            rho = loss_channel(rho, MAGNON_A, survival)
            rho = loss_channel(rho, MAGNON_B, survival)
        rho = apply_unitary(rho, self.swap_a)
        rho = apply_unitary(rho, self.swap_b)
        if cfg.propagation_transmissivity_a < 1.0:
            rho = loss_channel(rho, ANTISTOKES_A, cfg.propagation_transmissivity_a)
        if cfg.propagation_transmissivity_b < 1.0:
            rho = loss_channel(rho, ANTISTOKES_B, cfg.propagation_transmissivity_b)
        return rho.matrix

    def phase_and_mix(self, fixed: np.ndarray, delta_phi: float) -> DensityOperator:
        """Apply the arm-A read phase and the closing beamsplitter."""
        phases = np.exp(1j * delta_phi * self._anti_a_numbers)
        rho = fixed * phases[:, None] * phases[None, :].conj()
        rho = DensityOperator(self.registry, rho)
        return apply_unitary(rho, self.closing_bs)


def read_stage(heralded: HeraldedState, config: ProtocolConfig) -> DensityOperator:
    """Convert the heralded magnons to anti-Stokes light behind the interferometer.

    Returns the two-detector optical state (detector 1 port first) with the
    magnon modes traced out; uses the configured read phase.
    """
    optics = _ReadOptics(config)
    fixed = optics.fixed_evolution(heralded.rho_magnons.matrix)
    mixed = optics.phase_and_mix(fixed, config.read_phase_rad)
    return partial_trace(mixed, (ANTISTOKES_A, ANTISTOKES_B))


# ---------------------------------------------------------------------------
# Joint Stokes/anti-Stokes statistics (exact witness and sampling backend)


@dataclass(frozen=True)
class JointStatistics:
    """Exact joint photon-number distribution over the four detector ports.

    ``number_probabilities[s1, s2, a1, a2]`` is the probability of finding
    those occupations in the Stokes detector-1/2 and anti-Stokes
    detector-1/2 ports of one unconditioned run at a fixed read phase.
    """

    delta_phi: float
    number_probabilities: np.ndarray
    detector: DetectorSpec

    def mean_stokes(self, j: int) -> float:
        axis_weights = self._occupations(0 if j == 1 else 1)
        return float(np.sum(self.number_probabilities * axis_weights))

    def mean_antistokes(self, i: int) -> float:
        axis_weights = self._occupations(2 if i == 1 else 3)
        return float(np.sum(self.number_probabilities * axis_weights))

    def mean_product(self, i: int, j: int) -> float:
        weights = self._occupations(2 if i == 1 else 3) * self._occupations(0 if j == 1 else 1)
        return float(np.sum(self.number_probabilities * weights))

    def _occupations(self, axis: int) -> np.ndarray:
        shape = [1, 1, 1, 1]
        shape[axis] = self.number_probabilities.shape[axis]
        return np.arange(self.number_probabilities.shape[axis]).reshape(shape)

    def g2_number(self, i: int, j: int) -> float:
        """Second-order cross-coherence from exact pre-detection moments."""
        denom = self.mean_antistokes(i) * self.mean_stokes(j)
        if denom <= 0.0:
            raise ZeroIntensityError(
                "a detector intensity vanished; no light to correlate "
                "(pulse_mean_photons = 0, stokes_probability = 0 or read angle 0)")
        return self.mean_product(i, j) / denom

    def click_pattern_probabilities(self) -> np.ndarray:
        """4x4 outcome table over (stokes, anti) categories none/d1/d2/both.

        Applies the configured non-resolving detector POVM independently to
        each port; exact counterpart of one sampled trial.
        """
        probs = self.number_probabilities
        tables = []
        for axis in range(4):
            d = probs.shape[axis]
            no_click = self.detector.no_click_weights(d - 1)
            tables.append(np.stack([no_click, 1.0 - no_click]))  # [outcome, n]
        t = np.einsum("abcd,xa,yb,zc,wd->xyzw", probs, *tables)
        out = np.zeros((4, 4))
        category = {0: (0, 0), 1: (1, 0), 2: (0, 1), 3: (1, 1)}  # none, d1, d2, both
        for s_cat, (x, y) in category.items():
            for a_cat, (z, w) in category.items():
                out[s_cat, a_cat] = t[x, y, z, w]
        return out

    def g2_click(self, i: int, j: int) -> float:
        """Click-based cross-correlation; exact limit of the counting estimator."""
        table = self.click_pattern_probabilities()
        p_joint = float(table[j, i])
        p_s = float(table[j, :].sum())
        p_a = float(table[:, i].sum())
        if p_s <= 0.0 or p_a <= 0.0:
            raise ZeroIntensityError("a detector click rate vanished; nothing to correlate")
        return p_joint / (p_s * p_a)


def witness_ratio(g2_a1: float, g2_a2: float, epsilon: float) -> tuple[float, bool]:
    """Witness value from the two cross-coherences; +inf with a flag when balanced."""
    diff = g2_a1 - g2_a2
    if abs(diff) < epsilon:
        return math.inf, True
    return 4.0 * (g2_a1 + g2_a2 - 1.0) / (diff * diff), False


class _WitnessEngine:
    """Shared machinery: Stokes-sector decomposition plus read optics.

    Every observable downstream of the herald beamsplitter is diagonal in
    the Stokes ports and the read channel never touches them, so the front
    state separates exactly into Stokes-occupation sectors; each sector's
    (unnormalized) magnon block is pushed through the read optics once per
    phase.
    """

    def __init__(self, config: ProtocolConfig, blocks: dict[tuple[int, int], np.ndarray]):
        self.config = config
        self.optics = _ReadOptics(config)
        self.fixed_blocks = {
            key: self.optics.fixed_evolution(block)
            for key, block in blocks.items()
        }

    @classmethod
    def from_protocol(cls, config: ProtocolConfig) -> "_WitnessEngine":
        front = entangle_front_state(config)
        return cls(config, _stokes_sector_blocks(front.rho))

    @classmethod
    def from_magnon_state(cls, config: ProtocolConfig, rho_magnons: DensityOperator) -> "_WitnessEngine":
        """Replace the magnon state, keeping the protocol's Stokes statistics."""
        front = entangle_front_state(config)
        sector_weights = _stokes_sector_weights(front.rho)
        blocks = {
            key: weight * rho_magnons.matrix
            for key, weight in sector_weights.items() if weight > 0.0
        }
        return cls(config, blocks)

    def statistics(self, delta_phi: float) -> JointStatistics:
        co, cm = self.config.optical_cutoff, self.config.magnon_cutoff
        probs = np.zeros((co + 1, co + 1, co + 1, co + 1))
        for (s1, s2), fixed in self.fixed_blocks.items():
            mixed = self.optics.phase_and_mix(fixed, delta_phi)
            diag = mixed.occupation_probabilities().reshape(cm + 1, cm + 1, co + 1, co + 1)
            probs[s1, s2] += diag.sum(axis=(0, 1))
        return JointStatistics(delta_phi=delta_phi, number_probabilities=probs,
                               detector=self.config.detector)

    def witness_points(self, phase_grid: Sequence[float], stokes_detector: int) -> list[WitnessPoint]:
        if stokes_detector not in (1, 2):
            raise ProtocolError("stokes_detector must be 1 or 2")
        points = []
        for delta_phi in phase_grid:
            stats = self.statistics(float(delta_phi))
            g2_a1 = stats.g2_number(1, stokes_detector)
            g2_a2 = stats.g2_number(2, stokes_detector)
            value, divergent = witness_ratio(g2_a1, g2_a2, self.config.witness_divergence_epsilon)
            points.append(WitnessPoint(
                delta_phi=float(delta_phi), stokes_detector=stokes_detector,
                g2_a1=g2_a1, g2_a2=g2_a2, r_m=value, divergent=divergent))
        return points


def _stokes_sector_blocks(front_rho: DensityOperator) -> dict[tuple[int, int], np.ndarray]:
    dims = front_rho.registry.dims
    tensor = front_rho.matrix.reshape(dims + dims)
    d_m = dims[2] * dims[3]
    blocks = {}
    for s1 in range(dims[0]):
        for s2 in range(dims[1]):
            block = tensor[s1, s2, :, :, s1, s2, :, :].reshape(d_m, d_m)
            if float(np.trace(block).real) > 1e-18:
                blocks[(s1, s2)] = block
    return blocks


def _stokes_sector_weights(front_rho: DensityOperator) -> dict[tuple[int, int], float]:
    dims = front_rho.registry.dims
    diag = front_rho.occupation_probabilities().reshape(dims)
    weights = diag.sum(axis=(2, 3))
    return {(s1, s2): float(weights[s1, s2])
            for s1 in range(dims[0]) for s2 in range(dims[1])}


def witness_exact(config: ProtocolConfig, phase_grid: Sequence[float],
                  stokes_detector: int = 1) -> list[WitnessPoint]:
    """Exact witness curve over the read-phase grid for one Stokes detector."""
    engine = _WitnessEngine.from_protocol(config)
    return engine.witness_points(phase_grid, stokes_detector)


SEPARABLE_BASELINES = ("product_thermal", "classical_mixture", "vacuum")


def separable_baseline(config: ProtocolConfig, phase_grid: Sequence[float],
                       stokes_detector: int = 1,
                       baseline: str = "product_thermal") -> list[WitnessPoint]:
    """Witness curve with the heralded magnons replaced by a separable state.

    The Stokes field keeps the protocol's statistics but all correlation
    with the magnon modes is severed, which is what makes the replacement
    separable across the Stokes/magnon split as well.
    """
    registry = config.magnon_registry()
    if baseline == "product_thermal":
        nbar = config.mean_thermal_magnons
        w = thermal_weights(nbar, config.magnon_cutoff)
        mat = np.kron(np.diag(w), np.diag(w)).astype(complex)
        rho = DensityOperator(registry, mat)
    elif baseline == "classical_mixture":
        idx = build_basis(registry)
        mat = np.zeros((registry.dimension, registry.dimension), dtype=complex)
        mat[idx.index_of((0, 1)), idx.index_of((0, 1))] = 0.5
        mat[idx.index_of((1, 0)), idx.index_of((1, 0))] = 0.5
        rho = DensityOperator(registry, mat)
    elif baseline == "vacuum":
        rho = MultiModeState.vacuum(registry).to_density()
    else:
        raise ProtocolError(f"unknown baseline {baseline!r}; choose from {SEPARABLE_BASELINES}")
    engine = _WitnessEngine.from_magnon_state(config, rho)
    return engine.witness_points(phase_grid, stokes_detector)


def exact_joint_statistics(config: ProtocolConfig, delta_phi: Optional[float] = None) -> JointStatistics:
    """Exact detector statistics of one unconditioned run at one read phase."""
    engine = _WitnessEngine.from_protocol(config)
    return engine.statistics(config.read_phase_rad if delta_phi is None else float(delta_phi))


# ---------------------------------------------------------------------------
# Pipeline vs closed form


@dataclass(frozen=True)
class ThermalConsistencyReport:
    """Distance between the exact pipeline and the closed-form heralded state."""

    thermal_ratio: float
    herald_probability: float
    trace_distance: Optional[float]
    fidelity_pipeline: Optional[float]
    fidelity_closed_form: float
    bound: float
    passed: Optional[bool]
    note: str = ""


def trace_distance(rho_a: DensityOperator, rho_b: DensityOperator) -> float:
    if rho_a.registry.modes != rho_b.registry.modes:
        raise ProtocolError("trace distance needs matching registries")
    eigs = np.linalg.eigvalsh(rho_a.matrix - rho_b.matrix)
    return 0.5 * float(np.abs(eigs).sum())


def consistency_check_thermal(config: ProtocolConfig) -> ThermalConsistencyReport:
    """Compare the heralded pipeline state against the closed-form mixture.

    Report-only: a vanishing herald probability is reported rather than
    raised.  The documented bound is C * max(p, P, S^2) with
    C = CONSISTENCY_DISTANCE_CONSTANT.
    """
    s = config.thermal_ratio
    bound = CONSISTENCY_DISTANCE_CONSTANT * max(
        config.pulse_mean_photons, config.stokes_probability, s * s)
    f_closed = closed_form_fidelity(s)
    try:
        heralded = entangle_stage(config)
    except HeraldError:
        return ThermalConsistencyReport(
            thermal_ratio=s, herald_probability=0.0, trace_distance=None,
            fidelity_pipeline=None, fidelity_closed_form=f_closed, bound=bound,
            passed=None, note="herald probability zero; nothing to condition on")

    closed = thermal_final_state(s, heralded.herald_sign, config.magnon_cutoff)
    target = ideal_target_state(heralded.herald_sign, config.magnon_cutoff)
    distance = trace_distance(heralded.rho_magnons, closed)
    f_pipeline = fidelity_with_pure(heralded.rho_magnons, target)
    return ThermalConsistencyReport(
        thermal_ratio=s,
        herald_probability=heralded.herald_probability,
        trace_distance=distance,
        fidelity_pipeline=f_pipeline,
        fidelity_closed_form=f_closed,
        bound=bound,
        passed=bool(distance <= bound),
        note="",
    )
