import math
from dataclasses import replace

import numpy as np
import pytest

from optomagnon.channels import DetectorSpec, click_measurement
from optomagnon.fock import (
    ANTISTOKES_A,
    ANTISTOKES_B,
    MAGNON_A,
    MAGNON_B,
    expectation,
    fidelity_with_pure,
    number_operator,
    partial_trace,
)
from optomagnon.protocol import (
    HeraldError,
    ProtocolConfig,
    ProtocolError,
    ProtocolRegimeWarning,
    ZeroIntensityError,
    closed_form_fidelity,
    consistency_check_thermal,
    entangle_stage,
    exact_joint_statistics,
    ideal_target_state,
    mean_thermal_occupation,
    read_stage,
    separable_baseline,
    thermal_final_state,
    trace_distance,
    witness_exact,
)

COLD = ProtocolConfig(temperature_k=0.0)


# ---------------------------------------------------------------------------
# thermal occupation


def test_mean_thermal_occupation_reference_points():
    nbar = mean_thermal_occupation(7e9, 0.1)
    assert abs(nbar - 0.036) < 1e-3
    s_50mk = mean_thermal_occupation(7e9, 0.05)
    assert abs(s_50mk / (1 + s_50mk) - 0.001) < 5e-4


def test_mean_thermal_occupation_limits_and_errors():
    assert mean_thermal_occupation(7e9, 1e-3) < 1e-100
    with pytest.raises(ProtocolError):
        mean_thermal_occupation(7e9, 0.0)
    with pytest.raises(ProtocolError):
        mean_thermal_occupation(-1.0, 0.1)


def test_nbar_override_precedence():
    cfg = ProtocolConfig(temperature_k=0.1, nbar_override=0.5)
    assert cfg.mean_thermal_magnons == 0.5
    assert ProtocolConfig(temperature_k=0.0).mean_thermal_magnons == 0.0


def test_regime_warnings():
    with pytest.warns(ProtocolRegimeWarning):
        ProtocolConfig(pulse_mean_photons=0.2)
    with pytest.warns(ProtocolRegimeWarning):
        ProtocolConfig(stokes_probability=0.2)


# ---------------------------------------------------------------------------
# target and closed-form states


def test_ideal_target_state_properties():
    plus = ideal_target_state(+1)
    minus = ideal_target_state(-1)
    assert abs(plus.overlap(minus)) < 1e-14

    rho = plus.to_density()
    reg = rho.registry
    total = expectation(rho, number_operator(reg, MAGNON_A)).real \
        + expectation(rho, number_operator(reg, MAGNON_B)).real
    assert abs(total - 1.0) < 1e-14

    reduced = partial_trace(rho, [MAGNON_A])
    assert abs(reduced.matrix[0, 0] - 0.5) < 1e-14
    assert abs(reduced.matrix[1, 1] - 0.5) < 1e-14


def test_thermal_final_state_fidelity_formula():
    for s in (0.0, 0.001, 0.035, 0.1):
        for sign in (+1, -1):
            rho = thermal_final_state(s, sign)
            f = fidelity_with_pure(rho, ideal_target_state(sign))
            assert abs(f - closed_form_fidelity(s)) < 1e-12

    pure = thermal_final_state(0.0, +1)
    assert abs(fidelity_with_pure(pure, ideal_target_state(+1)) - 1.0) < 1e-14

    with pytest.raises(ProtocolError):
        thermal_final_state(1.0, +1)
    with pytest.raises(ProtocolError):
        thermal_final_state(0.1, +1, magnon_cutoff=1)


# ---------------------------------------------------------------------------
# entangling stage


def test_entangle_ideal_fidelity_and_signs():
    for detector, sign in ((1, -1), (2, +1)):
        cfg = replace(COLD, herald_detector_index=detector)
        heralded = entangle_stage(cfg)
        assert heralded.herald_sign == sign
        fid = fidelity_with_pure(heralded.rho_magnons, ideal_target_state(sign))
        assert fid >= 0.99
        wrong = fidelity_with_pure(heralded.rho_magnons, ideal_target_state(-sign))
        assert wrong < 0.01
        assert heralded.truncation_error < 1e-6
        heralded.rho_magnons.check()


def test_entangle_zero_pulse_raises():
    with pytest.raises(HeraldError):
        entangle_stage(replace(COLD, pulse_mean_photons=0.0))
    with pytest.raises(HeraldError):
        entangle_stage(replace(COLD, stokes_probability=0.0))


def test_herald_probability_linear_in_p_and_scattering():
    base = entangle_stage(COLD).herald_probability
    doubled_p = entangle_stage(replace(COLD, pulse_mean_photons=0.02)).herald_probability
    doubled_s = entangle_stage(replace(COLD, stokes_probability=0.02)).herald_probability
    assert abs(doubled_p / base - 2.0) < 0.05 * 2.0
    assert abs(doubled_s / base - 2.0) < 0.05 * 2.0


def test_entangle_thermal_marches_closed_form():
    cfg = ProtocolConfig()  # 100 mK defaults
    heralded = entangle_stage(cfg)
    fid = fidelity_with_pure(heralded.rho_magnons, ideal_target_state(heralded.herald_sign))
    assert abs(fid - closed_form_fidelity(cfg.thermal_ratio)) < 0.01


def test_entangle_stimulated_variant_three_s_deficit():
    # with true thermal seeding the pair creation is bosonically stimulated
    # and the fidelity deficit grows from ~2S to ~3S
    cfg = ProtocolConfig(thermal_model="squeezed_thermal")
    heralded = entangle_stage(cfg)
    fid = fidelity_with_pure(heralded.rho_magnons, ideal_target_state(heralded.herald_sign))
    s = cfg.thermal_ratio
    assert abs(fid - (1.0 - s) ** 3) < 2e-3


def test_loss_robustness_sweep():
    fidelities, heralds = [], []
    for eta in (1.0, 0.75, 0.5, 0.25):
        cfg = replace(COLD, propagation_transmissivity_a=eta, propagation_transmissivity_b=eta)
        heralded = entangle_stage(cfg)
        fidelities.append(fidelity_with_pure(heralded.rho_magnons,
                                             ideal_target_state(heralded.herald_sign)))
        heralds.append(heralded.herald_probability)
    assert max(fidelities) - min(fidelities) < 0.01
    assert all(a > b for a, b in zip(heralds, heralds[1:]))


def test_detector_efficiency_scales_herald_only():
    lossy = replace(COLD, detector=DetectorSpec(efficiency=0.5))
    heralded = entangle_stage(lossy)
    ideal = entangle_stage(COLD)
    assert abs(heralded.herald_probability / ideal.herald_probability - 0.5) < 0.01
    f = fidelity_with_pure(heralded.rho_magnons, ideal_target_state(heralded.herald_sign))
    assert f >= 0.99


# ---------------------------------------------------------------------------
# pipeline vs closed form


def test_consistency_cold_small_parameters():
    cfg = ProtocolConfig(temperature_k=0.0, pulse_mean_photons=1e-3, stokes_probability=1e-3)
    report = consistency_check_thermal(cfg)
    assert report.trace_distance < 1e-2
    assert report.passed


def test_consistency_at_reference_temperature():
    report = consistency_check_thermal(ProtocolConfig())
    assert report.passed
    assert abs(report.fidelity_pipeline - report.fidelity_closed_form) < 0.01
    assert report.trace_distance <= report.bound


def test_consistency_zero_scattering_reports_gracefully():
    report = consistency_check_thermal(ProtocolConfig(stokes_probability=0.0))
    assert report.herald_probability == 0.0
    assert report.trace_distance is None
    assert report.passed is None
    assert "herald" in report.note


# ---------------------------------------------------------------------------
# read-out stage


def test_read_zero_angle_gives_vacuum_antistokes():
    cfg = replace(COLD, read_swap_angle_rad=0.0)
    rho = read_stage(entangle_stage(cfg), cfg)
    assert abs(rho.occupation_probabilities()[0] - 1.0) < 1e-12


def test_read_full_swap_conserves_excitations():
    cfg = replace(COLD, read_swap_angle_rad=math.pi / 2)
    heralded = entangle_stage(cfg)
    rho = read_stage(heralded, cfg)
    anti_total = expectation(rho, number_operator(rho.registry, ANTISTOKES_A)).real \
        + expectation(rho, number_operator(rho.registry, ANTISTOKES_B)).real
    reg_m = heralded.rho_magnons.registry
    magnon_total = expectation(heralded.rho_magnons, number_operator(reg_m, MAGNON_A)).real \
        + expectation(heralded.rho_magnons, number_operator(reg_m, MAGNON_B)).real
    assert abs(anti_total - magnon_total) < 1e-10


def _detector_fringe(herald_detector, phases):
    cfg = replace(COLD, read_swap_angle_rad=math.pi / 2, herald_detector_index=herald_detector)
    heralded = entangle_stage(cfg)
    clicks = []
    for phi in phases:
        rho = read_stage(heralded, replace(cfg, read_phase_rad=float(phi)))
        clicks.append(click_measurement(rho, ANTISTOKES_A, DetectorSpec()).p_click)
    return np.array(clicks)


def test_read_fringe_matches_single_excitation_interference():
    # oracle: a single excitation split as (|01> + sign e^{i dphi} |10>)/sqrt(2)
    # through a symmetric 50/50 mixer clicks detector 1 with probability
    # (1 + sign sin(dphi))/2
    phases = np.linspace(0.0, 2 * math.pi, 9)
    fringe = _detector_fringe(1, phases)  # herald detector 1 -> sign -1
    predicted = 0.5 * (1.0 - np.sin(phases))
    assert np.abs(fringe - predicted).max() < 1e-4

    visibility = (fringe.max() - fringe.min()) / (fringe.max() + fringe.min())
    assert visibility > 1.0 - 1e-6


def test_read_fringe_shifts_by_pi_when_herald_flips():
    phases = np.linspace(0.0, 2 * math.pi, 17)[:-1]
    f1 = _detector_fringe(1, phases)
    f2 = _detector_fringe(2, phases)
    shift = (phases[np.argmin(f2)] - phases[np.argmin(f1)]) % (2 * math.pi)
    assert abs(shift - math.pi) < 1e-9


def test_read_magnon_decay_option():
    cfg = replace(COLD, read_swap_angle_rad=math.pi / 2, magnon_decay_delay_ratio=0.5)
    heralded = entangle_stage(cfg)
    rho = read_stage(heralded, cfg)
    anti_total = expectation(rho, number_operator(rho.registry, ANTISTOKES_A)).real \
        + expectation(rho, number_operator(rho.registry, ANTISTOKES_B)).real
    assert abs(anti_total - math.exp(-0.5)) < 1e-3


# ---------------------------------------------------------------------------
# witness


def test_witness_detects_entanglement_at_defaults():
    cfg = ProtocolConfig()
    grid = np.linspace(0.0, 2 * math.pi, 25)
    points = witness_exact(cfg, grid, stokes_detector=1)
    finite = [p.r_m for p in points if not p.divergent]
    assert min(finite) < 1.0
    for p in points:
        assert p.g2_a1 >= 0.0 and p.g2_a2 >= 0.0
        assert not math.isnan(p.r_m)


def test_witness_periodicity():
    cfg = ProtocolConfig()
    a = witness_exact(cfg, [0.9], 1)[0].r_m
    b = witness_exact(cfg, [0.9 + 2 * math.pi], 1)[0].r_m
    assert abs(a - b) < 1e-9


def test_witness_balanced_point_flags_divergence():
    cfg = ProtocolConfig()
    point = witness_exact(cfg, [0.0], 1)[0]  # fringes cross at zero phase
    assert point.divergent
    assert math.isinf(point.r_m)
    assert not math.isnan(point.r_m)


def test_witness_zero_intensity_raises():
    with pytest.raises((ZeroIntensityError, HeraldError)):
        witness_exact(ProtocolConfig(pulse_mean_photons=0.0), [0.5], 1)


def test_witness_second_stokes_detector():
    cfg = ProtocolConfig()
    points = witness_exact(cfg, [math.pi / 2], stokes_detector=2)
    assert not points[0].divergent
    assert points[0].r_m < 1.0


def test_witness_matches_first_order_pair_counting():
    # independent oracle: with cold magnons, one photon pair per run at
    # probability q per arm, the cross-coherence is the heralded fringe over
    # the accidental floor, g2 = 1 + (1 -/+ sin(dphi)) / (2 q), up to O(q)
    cfg = ProtocolConfig(temperature_k=0.0)
    q = cfg.pair_probability_a
    for phi in (0.5, 2.0, 4.0):
        point = witness_exact(cfg, [phi], 1)[0]
        pred_a1 = 1.0 + (1.0 - math.sin(phi)) / (2.0 * q)
        pred_a2 = 1.0 + (1.0 + math.sin(phi)) / (2.0 * q)
        assert abs(point.g2_a1 / pred_a1 - 1.0) < 5e-3
        assert abs(point.g2_a2 / pred_a2 - 1.0) < 5e-3
        pred_rm = 4.0 * (pred_a1 + pred_a2 - 1.0) / (pred_a1 - pred_a2) ** 2
        assert abs(point.r_m / pred_rm - 1.0) < 1e-2


def test_thermal_fringe_minimum_shows_photon_bunching():
    # at the dark fringe the surviving coincidences come from thermal
    # magnons; bosonic bunching with the heralded photon pulls them toward
    # the bright port, so the exact value sits well below the
    # no-interference estimate nbar / (nbar + q)
    cfg = ProtocolConfig()
    point = witness_exact(cfg, [math.pi / 2], 1)[0]
    naive = cfg.mean_thermal_magnons / (cfg.mean_thermal_magnons + cfg.pair_probability_a)
    assert point.g2_a1 < naive - 0.2


# ---------------------------------------------------------------------------
# separable baselines


@pytest.mark.parametrize("kind", ["product_thermal", "classical_mixture"])
def test_separable_baselines_never_beat_threshold(kind):
    cfg = ProtocolConfig()
    grid = np.linspace(0.0, 2 * math.pi, 9)
    points = separable_baseline(cfg, grid, 1, baseline=kind)
    for p in points:
        if not p.divergent:
            assert p.r_m >= 1.0 - 1e-6
    # with the magnon correlations severed both coherences sit at 1 exactly,
    # so every point lands on the divergence flag
    assert all(p.divergent for p in points)
    assert all(abs(p.g2_a1 - 1.0) < 1e-9 for p in points)


def test_separable_baseline_vacuum_raises():
    with pytest.raises(ZeroIntensityError):
        separable_baseline(ProtocolConfig(), [0.5], 1, baseline="vacuum")
    with pytest.raises(ProtocolError):
        separable_baseline(ProtocolConfig(), [0.5], 1, baseline="bogus")


# ---------------------------------------------------------------------------
# joint statistics consistency


def test_joint_statistics_consistent_with_entangle_stage():
    cfg = ProtocolConfig()
    stats = exact_joint_statistics(cfg)
    table = stats.click_pattern_probabilities()
    assert abs(table.sum() - 1.0) < 1e-9
    heralded = entangle_stage(cfg)
    assert abs(table[1, :].sum() - heralded.herald_probability) < 1e-12


def test_trace_distance_basic():
    a = thermal_final_state(0.0, +1)
    b = thermal_final_state(0.1, +1)
    assert trace_distance(a, a) < 1e-14
    assert 0.0 < trace_distance(a, b) < 1.0
