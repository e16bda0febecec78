"""Trajectory sampler and counting estimators for the click statistics.

Each run of the protocol has the same pre-detection state, so its detector
outcome distribution is computed once exactly and trials are drawn i.i.d.
from it (ancestral sampling of the measurement outcomes).  That makes this
module a pure statistics layer: it validates the counting estimators
against the exact engine rather than re-deriving the physics.

Reproducibility contract: a master seed is expanded into fixed-size chunk
streams through `numpy.random.SeedSequence([seed, *tags, chunk_index])`.
Chunk boundaries never depend on the worker count, so parallel runs
reproduce serial runs record for record.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .protocol import (
    JointStatistics,
    ProtocolConfig,
    WitnessPoint,
    exact_joint_statistics,
    witness_ratio,
)

CLICK_CATEGORIES = ("none", "detector1", "detector2", "both")
CHUNK_TRIALS = 4096


class EstimatorError(Exception):
    """Zero marginal counts or otherwise impossible estimate."""


@dataclass(frozen=True)
class ClickRecord:
    """Detector outcomes of one trial: one Stokes and one anti-Stokes window."""

    trial_index: int
    stokes_click: str
    antistokes_click: str

    def __post_init__(self):
        if self.stokes_click not in CLICK_CATEGORIES:
            raise ValueError(f"bad stokes outcome {self.stokes_click!r}")
        if self.antistokes_click not in CLICK_CATEGORIES:
            raise ValueError(f"bad anti-Stokes outcome {self.antistokes_click!r}")


@dataclass(frozen=True)
class EstimateWithError:
    value: float
    standard_error: float
    n_trials: int

    def __post_init__(self):
        if self.standard_error < 0:
            raise ValueError("standard_error must be >= 0")
        if self.n_trials <= 0:
            raise ValueError("n_trials must be positive")


def _outcome_probabilities(stats: JointStatistics) -> np.ndarray:
    """Flat 16-entry distribution over (stokes category, anti category)."""
    table = stats.click_pattern_probabilities()
    flat = table.reshape(-1)
    flat = np.clip(flat, 0.0, None)
    return flat / flat.sum()


def _sample_chunk(probabilities: np.ndarray, size: int, seed_entropy: Sequence[int]) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(list(seed_entropy)))
    return rng.choice(len(probabilities), size=size, p=probabilities)


def sample_trials(config: ProtocolConfig, n_trials: int, seed: Optional[int] = None,
                  workers: int = 1, stream_tags: Sequence[int] = (),
                  statistics: Optional[JointStatistics] = None) -> list[ClickRecord]:
    """Draw per-trial detector outcomes from the exact outcome distribution.

    Deterministic in (config, seed, n_trials): the same inputs give the
    same records whatever ``workers`` is.  ``stream_tags`` lets callers
    (e.g. a phase sweep) derive independent sub-streams from one master
    seed without collisions.  ``statistics`` reuses a precomputed exact
    distribution, e.g. across replicate runs at the same operating point.
    """
    if n_trials < 1:
        raise EstimatorError("n_trials must be >= 1")
    if seed is None:
        seed = config.rng_seed
    if statistics is None:
        statistics = exact_joint_statistics(config)
    probabilities = _outcome_probabilities(statistics)

    n_chunks = (n_trials + CHUNK_TRIALS - 1) // CHUNK_TRIALS
    sizes = [min(CHUNK_TRIALS, n_trials - k * CHUNK_TRIALS) for k in range(n_chunks)]
    entropies = [[int(seed), *map(int, stream_tags), k] for k in range(n_chunks)]

    if workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(
                lambda args: _sample_chunk(probabilities, args[0], args[1]),
                zip(sizes, entropies)))
    else:
        chunks = [_sample_chunk(probabilities, size, entropy)
                  for size, entropy in zip(sizes, entropies)]

    records = []
    trial = 0
    for chunk in chunks:
        for outcome in chunk:
            s_cat, a_cat = divmod(int(outcome), 4)
            records.append(ClickRecord(
                trial_index=trial,
                stokes_click=CLICK_CATEGORIES[s_cat],
                antistokes_click=CLICK_CATEGORIES[a_cat]))
            trial += 1
    return records


def click_fractions(records: Sequence[ClickRecord]) -> dict[str, float]:
    """Per-category fractions for both detection windows."""
    n = len(records)
    out = {}
    for category in CLICK_CATEGORIES:
        out[f"stokes_{category}"] = sum(r.stokes_click == category for r in records) / n
        out[f"antistokes_{category}"] = sum(r.antistokes_click == category for r in records) / n
    return out


def estimate_g2(records: Sequence[ClickRecord], anti_detector: int,
                stokes_detector: int) -> EstimateWithError:
    """Coincidence estimator N_coinc N / (N_anti N_stokes) with counting error.

    Uses exclusive single-detector outcomes: trials where both detectors of
    a window fired are counted in the records but excluded here, mirroring
    the herald rule that discards double clicks.  The standard error is the
    Poisson propagation sqrt(1/N_coinc + 1/N_anti + 1/N_stokes) relative;
    with zero coincidences it falls back to the one-count scale.
    """
    if anti_detector not in (1, 2) or stokes_detector not in (1, 2):
        raise EstimatorError("detector indices must be 1 or 2")
    n = len(records)
    if n == 0:
        raise EstimatorError("no records")
    s_key = f"detector{stokes_detector}"
    a_key = f"detector{anti_detector}"
    n_s = sum(r.stokes_click == s_key for r in records)
    n_a = sum(r.antistokes_click == a_key for r in records)
    n_c = sum(r.stokes_click == s_key and r.antistokes_click == a_key for r in records)
    if n_s == 0:
        raise EstimatorError(f"zero Stokes counts at detector {stokes_detector}")
    if n_a == 0:
        raise EstimatorError(f"zero anti-Stokes counts at detector {anti_detector}")
    scale = n / (n_s * n_a)
    if n_c == 0:
        return EstimateWithError(value=0.0, standard_error=scale, n_trials=n)
    value = n_c * scale
    rel = math.sqrt(1.0 / n_c + 1.0 / n_a + 1.0 / n_s)
    return EstimateWithError(value=value, standard_error=value * rel, n_trials=n)


def estimate_witness(records_by_phase: Mapping[float, Sequence[ClickRecord]],
                     stokes_detector: int, divergence_sigmas: float = 2.0) -> list[WitnessPoint]:
    """Witness estimates over a phase grid, with delta-method errors.

    A point is flagged divergent when the estimated denominator
    (g2_A1 - g2_A2) lies within ``divergence_sigmas`` standard errors of
    zero; flagged points carry an infinite value instead of a NaN.
    """
    points = []
    for delta_phi in records_by_phase:
        records = records_by_phase[delta_phi]
        est1 = estimate_g2(records, 1, stokes_detector)
        est2 = estimate_g2(records, 2, stokes_detector)
        g1, g2 = est1.value, est2.value
        s1, s2 = est1.standard_error, est2.standard_error
        diff = g1 - g2
        diff_sigma = math.hypot(s1, s2)
        if abs(diff) < divergence_sigmas * diff_sigma:
            points.append(WitnessPoint(
                delta_phi=float(delta_phi), stokes_detector=stokes_detector,
                g2_a1=g1, g2_a2=g2, r_m=math.inf, divergent=True,
                g2_a1_error=s1, g2_a2_error=s2, r_m_error=None,
                n_trials=est1.n_trials))
            continue
        value, divergent = witness_ratio(g1, g2, epsilon=0.0)
        d_g1 = 4.0 / diff**2 - 8.0 * (g1 + g2 - 1.0) / diff**3
        d_g2 = 4.0 / diff**2 + 8.0 * (g1 + g2 - 1.0) / diff**3
        sigma = math.sqrt((d_g1 * s1) ** 2 + (d_g2 * s2) ** 2)
        points.append(WitnessPoint(
            delta_phi=float(delta_phi), stokes_detector=stokes_detector,
            g2_a1=g1, g2_a2=g2, r_m=value, divergent=divergent,
            g2_a1_error=s1, g2_a2_error=s2, r_m_error=sigma,
            n_trials=est1.n_trials))
    return points


# ---------------------------------------------------------------------------
# Columnar serialization: one trial per line


RECORD_HEADER = "trial_index,stokes_click,antistokes_click"


def records_to_csv(records: Iterable[ClickRecord]) -> str:
    lines = [RECORD_HEADER]
    lines.extend(f"{r.trial_index},{r.stokes_click},{r.antistokes_click}" for r in records)
    return "\n".join(lines) + "\n"


def records_from_csv(text: str) -> list[ClickRecord]:
    lines = [line for line in io.StringIO(text) if line.strip()]
    if not lines or lines[0].strip() != RECORD_HEADER:
        raise EstimatorError(f"expected header {RECORD_HEADER!r}")
    records = []
    for line in lines[1:]:
        idx, stokes, anti = line.strip().split(",")
        records.append(ClickRecord(int(idx), stokes, anti))
    return records
