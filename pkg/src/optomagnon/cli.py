"""Command-line front end: config parsing, named experiments, columnar output.

Commands
    fidelity-sweep   closed-form vs pipeline heralded fidelity over T or nbar
    witness-sweep    exact witness curve over the read phase, optional MC columns
    baseline         witness curve with a separable magnon state substituted
    mc-run           sampled per-trial click records
    oracle-compare   MC estimators vs exact engine values at 4 sigma

Every command is deterministic given (config file, seed): reruns produce
identical bytes, whatever the worker count.  Exit codes: 0 success,
2 config parse error, 3 domain error, 4 runtime error, 5 oracle-compare
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from dataclasses import replace
from typing import Optional, Sequence, TextIO

import numpy as np

from . import montecarlo
from .channels import DetectorSpec
from .fock import FockSpaceError, fidelity_with_pure
from .protocol import (
    HeraldError,
    ProtocolConfig,
    ProtocolError,
    ZeroIntensityError,
    closed_form_fidelity,
    entangle_stage,
    exact_joint_statistics,
    ideal_target_state,
    separable_baseline,
    witness_exact,
    witness_ratio,
)

logger = logging.getLogger("optomagnon")

EXIT_OK = 0
EXIT_PARSE_ERROR = 2
EXIT_DOMAIN_ERROR = 3
EXIT_RUNTIME_ERROR = 4
EXIT_ORACLE_FAILURE = 5


class ConfigParseError(Exception):
    """Config file is not flat key = value text; carries the line number."""


class ConfigDomainError(Exception):
    """A config field name or value is invalid; names the offending field."""


_FLOAT_FIELDS = {
    "pulse_mean_photons", "stokes_probability", "stokes_probability_b",
    "magnon_frequency_hz", "temperature_k", "nbar_override",
    "propagation_transmissivity_a", "propagation_transmissivity_b",
    "read_phase_rad", "read_swap_angle_rad", "magnon_decay_delay_ratio",
    "herald_floor", "witness_divergence_epsilon",
}
_INT_FIELDS = {"herald_detector_index", "optical_cutoff", "magnon_cutoff", "rng_seed"}
_STR_FIELDS = {"thermal_model"}
_DETECTOR_FIELDS = {"detector.efficiency", "detector.dark_click_probability"}


def parse_config_text(text: str) -> ProtocolConfig:
    """Parse flat ``key = value`` lines with # comments into a config."""
    kwargs: dict = {}
    detector_kwargs: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigParseError(f"line {lineno}: empty key or value in {raw!r}")
        try:
            if key in _DETECTOR_FIELDS:
                detector_kwargs[key.split(".", 1)[1]] = float(value)
            elif key in _FLOAT_FIELDS:
                kwargs[key] = float(value)
            elif key in _INT_FIELDS:
                kwargs[key] = int(value)
            elif key in _STR_FIELDS:
                kwargs[key] = value
            else:
                raise ConfigDomainError(f"unknown config field {key!r} (line {lineno})")
        except ValueError as exc:
            raise ConfigDomainError(f"field {key!r}: bad value {value!r} (line {lineno})") from exc
    if detector_kwargs:
        try:
            kwargs["detector"] = DetectorSpec(**detector_kwargs)
        except FockSpaceError as exc:
            raise ConfigDomainError(f"field 'detector': {exc}") from exc
    if kwargs.get("nbar_override") is not None:
        logger.info("nbar_override set; temperature_k is ignored for the thermal occupation")
    try:
        return ProtocolConfig(**kwargs)
    except (ProtocolError, FockSpaceError) as exc:
        field = _offending_field(exc, kwargs)
        raise ConfigDomainError(f"field {field}: {exc}") from exc


def _offending_field(exc: Exception, kwargs: dict) -> str:
    message = str(exc)
    for name in kwargs:
        if name in message:
            return repr(name)
    return "<config>"


def load_config(path: Optional[str]) -> ProtocolConfig:
    """Read a config file; missing path or empty file gives the defaults."""
    if path is None:
        return ProtocolConfig()
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigParseError(f"cannot read config {path!r}: {exc}") from exc
    return parse_config_text(text)


@dataclasses.dataclass(frozen=True)
class SweepSpec:
    field: str
    start: float
    stop: float
    count: int

    @classmethod
    def parse(cls, text: str) -> "SweepSpec":
        parts = text.split(":")
        if len(parts) != 4:
            raise ConfigDomainError(f"sweep must be field:start:stop:count, got {text!r}")
        field, start, stop, count = parts
        if field not in _FLOAT_FIELDS:
            raise ConfigDomainError(f"sweep field {field!r} is not a real-valued config field")
        try:
            start_f, stop_f, count_i = float(start), float(stop), int(count)
        except ValueError as exc:
            raise ConfigDomainError(f"bad sweep bounds in {text!r}") from exc
        if count_i < 1:
            raise ConfigDomainError("sweep count must be >= 1")
        return cls(field, start_f, stop_f, count_i)

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.count)


# ---------------------------------------------------------------------------
# Output formatting


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_table(columns: Sequence[str], rows: Sequence[Sequence], fmt: str, out: TextIO) -> None:
    if fmt == "csv":
        out.write(",".join(columns) + "\n")
        for row in rows:
            out.write(",".join(_fmt(v) for v in row) + "\n")
    elif fmt == "json":
        # strict JSON has no inf/nan literals; non-finite values become null
        payload = [
            {col: (None if isinstance(v, float) and not math.isfinite(v) else v)
             for col, v in zip(columns, row)}
            for row in rows
        ]
        out.write(json.dumps(payload, indent=2))
        out.write("\n")
    else:
        raise ConfigDomainError(f"unknown output format {fmt!r}")


# ---------------------------------------------------------------------------
# Commands


def run_fidelity_sweep(config: ProtocolConfig, sweep: SweepSpec, fmt: str, out: TextIO) -> None:
    """Closed-form and pipeline fidelities over a thermal sweep (T or nbar)."""
    if sweep.field not in ("temperature_k", "nbar_override"):
        raise ConfigDomainError(
            "fidelity-sweep sweeps 'temperature_k' or 'nbar_override' "
            "(for a thermal-ratio sweep use nbar_override = S/(1-S))")
    columns = (sweep.field, "nbar", "S", "F_closed_form", "F_pipeline")
    rows = []
    for value in sweep.values():
        cfg = replace(config, **{sweep.field: float(value)})
        nbar = cfg.mean_thermal_magnons
        s = cfg.thermal_ratio
        heralded = entangle_stage(cfg)
        target = ideal_target_state(heralded.herald_sign, cfg.magnon_cutoff)
        rows.append((
            float(value), nbar, s,
            closed_form_fidelity(s),
            fidelity_with_pure(heralded.rho_magnons, target),
        ))
    write_table(columns, rows, fmt, out)


def _phase_grid(count: int) -> np.ndarray:
    return np.linspace(0.0, 2.0 * math.pi, count)


def _witness_columns(with_mc: bool) -> tuple[str, ...]:
    columns = ("delta_phi", "j", "g2_A1Sj", "g2_A2Sj", "R_m", "divergence_flag")
    if with_mc:
        columns += ("mc_g2_A1Sj", "mc_g2_A1Sj_err", "mc_g2_A2Sj", "mc_g2_A2Sj_err",
                    "mc_R_m", "mc_R_m_err")
    return columns


def run_witness_sweep(config: ProtocolConfig, fmt: str, out: TextIO, grid_points: int,
                      stokes_detector: int, trials: int, seed: Optional[int],
                      workers: int) -> None:
    """Exact witness curve; MC companion columns when trials > 0."""
    grid = _phase_grid(grid_points)
    points = witness_exact(config, grid, stokes_detector)
    mc_points = None
    if trials > 0:
        records_by_phase = {}
        for k, phi in enumerate(grid):
            cfg = replace(config, read_phase_rad=float(phi))
            records_by_phase[float(phi)] = montecarlo.sample_trials(
                cfg, trials, seed=seed, workers=workers, stream_tags=(k,))
        mc_points = montecarlo.estimate_witness(records_by_phase, stokes_detector)

    rows = []
    for k, point in enumerate(points):
        row = [point.delta_phi, point.stokes_detector, point.g2_a1, point.g2_a2,
               point.r_m, point.divergent]
        if mc_points is not None:
            mc = mc_points[k]
            row += [mc.g2_a1, mc.g2_a1_error, mc.g2_a2, mc.g2_a2_error,
                    mc.r_m, mc.r_m_error]
        rows.append(row)
    write_table(_witness_columns(mc_points is not None), rows, fmt, out)


def run_baseline(config: ProtocolConfig, fmt: str, out: TextIO, grid_points: int,
                 stokes_detector: int, baseline: str) -> None:
    grid = _phase_grid(grid_points)
    points = separable_baseline(config, grid, stokes_detector, baseline=baseline)
    rows = [
        (p.delta_phi, p.stokes_detector, p.g2_a1, p.g2_a2, p.r_m, p.divergent)
        for p in points
    ]
    write_table(_witness_columns(False), rows, fmt, out)


def run_mc_run(config: ProtocolConfig, fmt: str, out: TextIO, trials: int,
               seed: Optional[int], workers: int) -> None:
    records = montecarlo.sample_trials(config, trials, seed=seed, workers=workers)
    if fmt == "csv":
        out.write(montecarlo.records_to_csv(records))
    else:
        payload = [dataclasses.asdict(r) for r in records]
        out.write(json.dumps(payload, indent=2))
        out.write("\n")


def run_oracle_compare(config: ProtocolConfig, fmt: str, out: TextIO, trials: int,
                       seed: Optional[int], workers: int, sigmas: float = 4.0) -> bool:
    """Compare MC estimates against exact engine values; True when all pass.

    Meaningful comparisons need on the order of 10^3 trials or more; fewer
    still give a well-formed report, with wide sigmas and correlation rows
    marked not estimable when a marginal count is zero.
    """
    if trials < 1:
        raise ConfigDomainError("oracle-compare needs --trials >= 1")
    stats = exact_joint_statistics(config)
    table = stats.click_pattern_probabilities()
    records = montecarlo.sample_trials(config, trials, seed=seed, workers=workers)
    fractions = montecarlo.click_fractions(records)

    rows = []

    def rate_row(name: str, exact: float, estimate: float) -> None:
        exact, estimate = float(exact), float(estimate)
        sigma = math.sqrt(max(exact * (1.0 - exact), 1e-300) / trials)
        rows.append((name, exact, estimate, sigma, bool(abs(estimate - exact) <= sigmas * sigma)))

    herald = config.herald_detector_index
    rate_row("herald_probability", float(table[herald, :].sum()),
             fractions[f"stokes_detector{herald}"])
    rate_row("stokes_click_rate_d1", float(table[1, :].sum()), fractions["stokes_detector1"])
    rate_row("stokes_click_rate_d2", float(table[2, :].sum()), fractions["stokes_detector2"])
    rate_row("antistokes_click_rate_d1", float(table[:, 1].sum()), fractions["antistokes_detector1"])
    rate_row("antistokes_click_rate_d2", float(table[:, 2].sum()), fractions["antistokes_detector2"])

    for anti in (1, 2):
        name = f"g2_A{anti}S1"
        exact = stats.g2_click(anti, 1)
        try:
            est = montecarlo.estimate_g2(records, anti, 1)
        except montecarlo.EstimatorError:
            rows.append((name, exact, None, None, False))
            continue
        sigma = max(est.standard_error, 1e-300)
        rows.append((name, exact, est.value, sigma,
                     bool(abs(est.value - exact) <= sigmas * sigma)))

    exact_rm, exact_div = witness_ratio(stats.g2_click(1, 1), stats.g2_click(2, 1),
                                        config.witness_divergence_epsilon)
    try:
        mc_point = montecarlo.estimate_witness(
            {config.read_phase_rad: records}, stokes_detector=1)[0]
    except montecarlo.EstimatorError:
        mc_point = None
    if mc_point is None:
        rows.append(("R_m", exact_rm, None, None, False))
    elif exact_div or mc_point.divergent or mc_point.r_m_error is None:
        rows.append(("R_m", exact_rm, mc_point.r_m, float("nan"),
                     bool(exact_div == mc_point.divergent)))
    else:
        sigma = max(mc_point.r_m_error, 1e-300)
        rows.append(("R_m", exact_rm, mc_point.r_m, sigma,
                     bool(abs(mc_point.r_m - exact_rm) <= sigmas * sigma)))

    write_table(("observable", "exact", "mc_estimate", "sigma", "passed"), rows, fmt, out)
    return all(row[-1] for row in rows)


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="optomagnon",
        description="Heralded magnon-entanglement protocol simulator")
    parser.add_argument("command", choices=(
        "fidelity-sweep", "witness-sweep", "baseline", "mc-run", "oracle-compare"))
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--out", help="output path (default stdout)")
    parser.add_argument("--format", choices=("csv", "json"), default="csv")
    parser.add_argument("--seed", type=int, help="override the config rng seed")
    parser.add_argument("--trials", type=int, default=0, help="MC trials per point")
    parser.add_argument("--sweep", help="field:start:stop:count")
    parser.add_argument("--grid-points", type=int, default=25,
                        help="read-phase grid size for witness commands")
    parser.add_argument("--detector", type=int, default=1, choices=(1, 2),
                        help="Stokes detector index j for the witness")
    parser.add_argument("--baseline", default="product_thermal",
                        help="separable baseline kind for the baseline command")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--verbose", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = replace(config, rng_seed=args.seed)

        sink = open(args.out, "w", encoding="utf-8", newline="\n") if args.out else sys.stdout
        try:
            if args.command == "fidelity-sweep":
                if not args.sweep:
                    raise ConfigDomainError("fidelity-sweep requires --sweep")
                run_fidelity_sweep(config, SweepSpec.parse(args.sweep), args.format, sink)
            elif args.command == "witness-sweep":
                run_witness_sweep(config, args.format, sink, args.grid_points,
                                  args.detector, args.trials, args.seed, args.workers)
            elif args.command == "baseline":
                run_baseline(config, args.format, sink, args.grid_points,
                             args.detector, args.baseline)
            elif args.command == "mc-run":
                if args.trials < 1:
                    raise ConfigDomainError("mc-run requires --trials >= 1")
                run_mc_run(config, args.format, sink, args.trials, args.seed, args.workers)
            elif args.command == "oracle-compare":
                if not run_oracle_compare(config, args.format, sink, args.trials,
                                          args.seed, args.workers):
                    return EXIT_ORACLE_FAILURE
        finally:
            if args.out:
                sink.close()
        return EXIT_OK
    except ConfigParseError as exc:
        print(f"config parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE_ERROR
    except (ConfigDomainError, ProtocolError) as exc:
        if isinstance(exc, (HeraldError, ZeroIntensityError)):
            print(f"runtime error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME_ERROR
        print(f"domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN_ERROR
    except (FockSpaceError, montecarlo.EstimatorError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
