"""Command-line surface: basin, design, simulate, fit, predict, decompose,
report.

All file-writing commands validate inputs and finish computing before any
output file is created, then write the data artifacts plus a manifest.json
sidecar (command line, 64-bit config hash, seed, tool version, timestamp).
Timestamps honor SOURCE_DATE_EPOCH so repeated runs are byte-identical.
Exit codes: 0 success, 2 input error, 3 infeasible design, 4 estimation
failure, 5 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import datetime
import hashlib
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .basin import basin_report, solve_cost, solve_players
from .errors import ConfigError, Error, EstimationError, Infeasible, InvalidParameter
from .estimation import (
    ProbitFit,
    decomposition_table,
    dummy_decomposition,
    fit_piecewise_probit,
    predict_rate,
    read_cells_csv,
    read_observations_csv,
)
from .game import Treatment, as_ratio, build_treatment, format_rational
from .simulator import (
    AdaptiveSettings,
    SessionConfig,
    compute_stats,
    config_to_json_dict,
    record_sidecar,
    record_to_csv,
    run_session,
    stats_table,
)
from .strategies import Mixture

OUTPUT_DIR_ENV = "BASINLAB_OUT"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_ESTIMATION = 4
EXIT_IO = 5


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        moment = datetime.datetime.fromtimestamp(int(epoch), tz=datetime.timezone.utc)
    else:
        moment = datetime.datetime.now(tz=datetime.timezone.utc)
    return moment.strftime("%Y-%m-%dT%H:%M:%SZ")


def build_manifest(command: list[str], config_bytes: bytes, seed: int | None) -> dict:
    return {
        "command": " ".join(command),
        "config_hash": hashlib.sha256(config_bytes).hexdigest()[:16],
        "seed": seed,
        "version": __version__,
        "created_utc": _timestamp(),
    }


def _dump_json(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _write_outputs(out_dir: Path, files: dict[str, str]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, content in files.items():
        (out_dir / name).write_text(content)


def _out_dir(args: argparse.Namespace) -> Path:
    if args.out is not None:
        return Path(args.out)
    return Path(os.environ.get(OUTPUT_DIR_ENV, "."))


def _parse_window(text: str) -> tuple[int, int]:
    try:
        start, end = text.split(":")
        return int(start), int(end)
    except ValueError as exc:
        raise ConfigError(f"window must look like START:END, got {text!r}") from exc


def _read_config(path: str) -> tuple[str, configparser.ConfigParser]:
    text = Path(path).read_text()
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config {path}: {exc}") from exc
    return text, parser


def _treatment_from_parser(parser: configparser.ConfigParser, section: str = "treatment") -> Treatment:
    if not parser.has_section(section):
        raise ConfigError(f"config is missing the [{section}] section")
    sec = parser[section]
    for key in ("players", "cost_x", "delta", "pi0", "delta_pi"):
        if key not in sec:
            raise ConfigError(f"[{section}] is missing key {key!r}")
    try:
        players = int(sec["players"])
    except ValueError as exc:
        raise ConfigError(f"players: not an integer: {sec['players']!r}") from exc
    return build_treatment(
        players=players,
        cost_x=sec["cost_x"],
        delta=sec["delta"],
        pi0=sec["pi0"],
        delta_pi=sec["delta_pi"],
        label=sec.get("label", ""),
    )


def _session_config_from_parser(
    parser: configparser.ConfigParser,
    *,
    seed_override: int | None,
    window_override: tuple[int, int] | None,
    schedule: tuple[int, ...] | None,
    session_id: str | None,
) -> SessionConfig:
    treatment = _treatment_from_parser(parser)
    if not parser.has_section("session"):
        raise ConfigError("config is missing the [session] section")
    sec = parser["session"]

    def _int(key: str, default: int | None = None) -> int:
        raw = sec.get(key)
        if raw is None:
            if default is None:
                raise ConfigError(f"[session] is missing key {key!r}")
            return default
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: not an integer: {raw!r}") from exc

    mixture = None
    adaptive = None
    mode = sec.get("mode", "static").strip().lower()
    if mode == "static":
        if "mixture_p" not in sec:
            raise ConfigError("[session] static mode needs mixture_p")
        mixture = Mixture(p=float(as_ratio(sec["mixture_p"], "mixture_p")))
    elif mode == "adaptive":
        if "initial_p" not in sec:
            raise ConfigError("[session] adaptive mode needs initial_p")
        adaptive = AdaptiveSettings(
            initial_p=float(as_ratio(sec["initial_p"], "initial_p")),
            belief_window=_int("belief_window", 3),
        )
    else:
        raise ConfigError(f"mode must be static or adaptive, got {mode!r}")

    window = window_override
    if window is None and "metric_window" in sec:
        window = _parse_window(sec["metric_window"])
    seed = seed_override if seed_override is not None else _int("seed")
    return SessionConfig(
        treatment=treatment,
        subjects=_int("subjects"),
        seed=seed,
        supergames=_int("supergames", 20),
        mixture=mixture,
        adaptive=adaptive,
        fixed_types=sec.getboolean("fixed_types", fallback=False),
        length_schedule=schedule,
        metric_window=window,
        session_id=session_id if session_id is not None else sec.get("session_id", "session"),
    )


def _basin_text(report) -> str:
    lines = [
        f"players        {report.players}",
        f"cost_x         {format_rational(report.cost_x)}",
        f"delta          {format_rational(report.delta)}",
        f"p_star_corr    {report.p_star_corr:.6f}  [{format_rational(report.p_star_corr_exact)}]",
        f"p_star_ind     {report.p_star_ind:.6f}"
        + (
            f"  [{format_rational(report.p_star_ind_exact)}]"
            if report.p_star_ind_exact is not None
            else ""
        ),
        f"q_star         {report.q_star:.6f}  [{format_rational(report.q_star_exact)}]",
        f"grim_is_spe    {str(report.grim_is_spe).lower()}",
        f"knife_edge     {str(report.knife_edge).lower()}",
        f"risk_dominant  {report.risk_dominant.value}",
    ]
    return "\n".join(lines) + "\n"


def cmd_basin(args: argparse.Namespace) -> int:
    _, parser = _read_config(args.config)
    treatment = _treatment_from_parser(parser)
    report = basin_report(treatment.cost_x, treatment.players, treatment.delta)
    if args.json:
        sys.stdout.write(_dump_json(report.to_json_dict()))
    else:
        sys.stdout.write(_basin_text(report))
    return EXIT_OK


def cmd_design(args: argparse.Namespace) -> int:
    target = as_ratio(args.target, "target")
    delta = as_ratio(args.delta, "delta")
    payload: dict = {
        "target_p_star_ind": float(target),
        "delta": format_rational(delta),
    }
    lines = []
    if args.players is not None:
        x = solve_cost(target, args.players, delta)
        knife_edge_x = delta / (1 - delta)
        verification = basin_report(x, args.players, delta)
        payload.update(
            {
                "players": args.players,
                "cost_x": format_rational(x),
                "cost_x_float": float(x),
                "verified_p_star_ind": verification.p_star_ind,
            }
        )
        lines.append(f"cost_x = {format_rational(x)} ({float(x):.6g})")
        lines.append(f"verified p_star_ind = {verification.p_star_ind:.12f}")
        near_edge = float(target) > 0.99 or float(x) > 0.99 * float(knife_edge_x)
    else:
        solution = solve_players(target, args.cost, delta)
        payload.update(
            {
                "cost_x": format_rational(as_ratio(args.cost, "cost")),
                "players_real": solution.n_real,
                "players_floor": solution.lower,
                "players_floor_basin": solution.lower_basin,
                "players_ceil": solution.upper,
                "players_ceil_basin": solution.upper_basin,
                "players_exact": solution.exact,
            }
        )
        lines.append(f"players (real-valued) = {solution.n_real!r}")
        if solution.exact is not None:
            lines.append(f"players = {solution.exact} reproduces the target to 1e-12")
        else:
            lines.append(
                f"no integer solution: N={solution.lower} gives {solution.lower_basin:.6f}, "
                f"N={solution.upper} gives {solution.upper_basin:.6f}"
            )
        near_edge = float(target) > 0.99
    if near_edge:
        payload["warning"] = "near-knife-edge design: basin target close to 1"
        lines.append("warning: near-knife-edge design (basin target close to 1)")
    if args.json:
        sys.stdout.write(_dump_json(payload))
    else:
        sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def _load_schedule(path: str) -> tuple[int, ...]:
    payload = json.loads(Path(path).read_text())
    if "lengths" not in payload:
        raise ConfigError(f"{path} has no 'lengths' field (expected a session sidecar)")
    return tuple(int(v) for v in payload["lengths"])


def cmd_simulate(args: argparse.Namespace) -> int:
    text, parser = _read_config(args.config)
    schedule = _load_schedule(args.schedule_from) if args.schedule_from else None
    window = _parse_window(args.window) if args.window else None
    config = _session_config_from_parser(
        parser,
        seed_override=args.seed,
        window_override=window,
        schedule=schedule,
        session_id=args.session_id,
    )
    record = run_session(config)
    stats = compute_stats(record)
    manifest = build_manifest(sys.argv[1:] or ["simulate"], text.encode(), config.seed)
    files = {
        "rounds.csv": record_to_csv(record),
        "session.json": record_sidecar(record),
        "stats.json": _dump_json(stats.to_json_dict()),
        "stats.txt": stats_table(stats, label=config.treatment.label or config.session_id),
        "manifest.json": _dump_json(manifest),
    }
    _write_outputs(_out_dir(args), files)
    return EXIT_OK


def cmd_fit(args: argparse.Namespace) -> int:
    text = Path(args.data).read_text()
    observations = read_observations_csv(text)
    fit = fit_piecewise_probit(
        observations, cluster_correction=not args.no_small_sample_correction
    )
    manifest = build_manifest(sys.argv[1:] or ["fit"], text.encode(), None)
    files = {
        "fit.json": _dump_json(fit.to_json_dict()),
        "manifest.json": _dump_json(manifest),
    }
    _write_outputs(_out_dir(args), files)
    return EXIT_OK


def _fit_from_json(payload: dict) -> ProbitFit:
    beta = np.asarray(payload["beta"], dtype=float)
    k = beta.size
    return ProbitFit(
        beta=beta,
        vcov=np.asarray(payload["vcov"], dtype=float).reshape(k, k),
        vcov_classical=np.zeros((k, k)),
        log_likelihood=payload["log_likelihood"],
        n_obs=payload["n_obs"],
        n_clusters=payload["n_clusters"],
        converged=payload["converged"],
        iterations=payload["iterations"],
        gradient_norm=payload["gradient_norm"],
        columns=tuple(payload["columns"]),
    )


def _svg_curve(points: list[tuple[float, float, float, float]]) -> str:
    """Static SVG of the predicted-rate curve with a confidence band."""
    width, height = 720, 480
    left, right, top, bottom = 70, 20, 20, 50

    def sx(x: float) -> float:
        return left + x * (width - left - right)

    def sy(y: float) -> float:
        return top + (1.0 - y) * (height - top - bottom)

    def f(v: float) -> str:
        return f"{v:.2f}"

    band = [(sx(p), sy(min(1.0, hi))) for p, _, _, hi in points]
    band += [(sx(p), sy(max(0.0, lo))) for p, _, lo, _ in reversed(points)]
    band_path = " ".join(f"{f(x)},{f(y)}" for x, y in band)
    line_path = " ".join(f"{f(sx(p))},{f(sy(r))}" for p, r, _, _ in points)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<polygon points="{band_path}" fill="#9ecae1" fill-opacity="0.5"/>',
        f'<polyline points="{line_path}" fill="none" stroke="#08519c" stroke-width="2"/>',
        f'<line x1="{sx(0.5):.2f}" y1="{sy(0):.2f}" x2="{sx(0.5):.2f}" y2="{sy(1):.2f}" '
        'stroke="#888888" stroke-dasharray="4 4"/>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        parts.append(
            f'<line x1="{sx(tick):.2f}" y1="{sy(0):.2f}" x2="{sx(tick):.2f}" '
            f'y2="{sy(0) + 6:.2f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{sx(tick):.2f}" y="{sy(0) + 22:.2f}" font-size="13" '
            f'text-anchor="middle">{tick:g}</text>'
        )
        parts.append(
            f'<line x1="{sx(0) - 6:.2f}" y1="{sy(tick):.2f}" x2="{sx(0):.2f}" '
            f'y2="{sy(tick):.2f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{sx(0) - 10:.2f}" y="{sy(tick) + 4:.2f}" font-size="13" '
            f'text-anchor="end">{tick:g}</text>'
        )
    parts.append(
        f'<line x1="{sx(0):.2f}" y1="{sy(0):.2f}" x2="{sx(1):.2f}" y2="{sy(0):.2f}" stroke="black"/>'
    )
    parts.append(
        f'<line x1="{sx(0):.2f}" y1="{sy(0):.2f}" x2="{sx(0):.2f}" y2="{sy(1):.2f}" stroke="black"/>'
    )
    parts.append(
        f'<text x="{sx(0.5):.2f}" y="{height - 10}" font-size="14" text-anchor="middle">'
        "AllD basin size</text>"
    )
    parts.append(
        f'<text x="16" y="{sy(0.5):.2f}" font-size="14" text-anchor="middle" '
        f'transform="rotate(-90 16 {sy(0.5):.2f})">Predicted cooperation rate</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_predict(args: argparse.Namespace) -> int:
    text = Path(args.fit).read_text()
    fit = _fit_from_json(json.loads(text))
    if args.at:
        grid = [float(Fraction(part.strip())) for part in args.at.split(",")]
    else:
        lo, hi, count = args.grid_lo, args.grid_hi, args.grid_points
        grid = list(np.linspace(lo, hi, count))
    points = []
    for p in grid:
        rate, se = predict_rate(fit, p)
        points.append((p, rate, rate - 1.96 * se, rate + 1.96 * se))
    lines = ["p_star,rate,se,lo95,hi95"]
    for p, rate, lo95, hi95 in points:
        se = (hi95 - rate) / 1.96
        lines.append(f"{p!r},{rate!r},{se!r},{lo95!r},{hi95!r}")
    manifest = build_manifest(sys.argv[1:] or ["predict"], text.encode(), None)
    files = {
        "curve.csv": "\n".join(lines) + "\n",
        "curve.svg": _svg_curve(points),
        "manifest.json": _dump_json(manifest),
    }
    _write_outputs(_out_dir(args), files)
    return EXIT_OK


def cmd_decompose(args: argparse.Namespace) -> int:
    text = Path(args.data).read_text()
    cells = read_cells_csv(text)
    decomp = dummy_decomposition(
        cells, cluster_correction=not args.no_small_sample_correction
    )
    manifest = build_manifest(sys.argv[1:] or ["decompose"], text.encode(), None)
    files = {
        "decomposition.json": _dump_json(decomp.to_json_dict()),
        "decomposition.txt": decomposition_table(decomp),
        "manifest.json": _dump_json(manifest),
    }
    _write_outputs(_out_dir(args), files)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    text, parser = _read_config(args.config)
    window = _parse_window(args.window) if args.window else None
    config = _session_config_from_parser(
        parser,
        seed_override=args.seed,
        window_override=window,
        schedule=None,
        session_id=None,
    )
    treatment = config.treatment
    report = basin_report(treatment.cost_x, treatment.players, treatment.delta)
    record = run_session(config)
    stats = compute_stats(record)
    manifest = build_manifest(sys.argv[1:] or ["report"], text.encode(), config.seed)
    payload = {
        "basin": report.to_json_dict(),
        "stats": stats.to_json_dict(),
        "config": config_to_json_dict(config),
        "lengths": list(record.lengths),
    }
    document = (
        f"Treatment report: {treatment.label or config.session_id}\n\n"
        "Basin measures\n--------------\n"
        + _basin_text(report)
        + "\nSimulated rates (window "
        + f"{config.window()[0]}:{config.window()[1]})\n----------------\n"
        + stats_table(stats, label=treatment.label or config.session_id)
    )
    files = {
        "report.json": _dump_json(payload),
        "report.txt": document,
        "manifest.json": _dump_json(manifest),
    }
    _write_outputs(_out_dir(args), files)
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="basinlab",
        description="Basin-of-attraction analysis and supergame simulation "
        "for N-player repeated social dilemmas.",
    )
    parser.add_argument("--version", action="version", version=f"basinlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_basin = sub.add_parser("basin", help="basin measures for a treatment config")
    p_basin.add_argument("--config", required=True)
    p_basin.add_argument("--json", action="store_true")
    p_basin.set_defaults(func=cmd_basin)

    p_design = sub.add_parser("design", help="invert the independent basin measure")
    p_design.add_argument("--target", required=True, help="target basin size (a/b or decimal)")
    group = p_design.add_mutually_exclusive_group(required=True)
    group.add_argument("--players", type=int, help="solve for cost_x at this group size")
    group.add_argument("--cost", help="solve for group size at this cost_x")
    p_design.add_argument("--delta", required=True)
    p_design.add_argument("--json", action="store_true")
    p_design.set_defaults(func=cmd_design)

    p_sim = sub.add_parser("simulate", help="run one session and export its record")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", default=None)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--schedule-from", default=None, help="reuse lengths from a session.json")
    p_sim.add_argument("--window", default=None, help="metric window START:END (1-based)")
    p_sim.add_argument("--session-id", default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_fit = sub.add_parser("fit", help="fit the piecewise probit to observation CSV")
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--out", default=None)
    p_fit.add_argument("--no-small-sample-correction", action="store_true")
    p_fit.set_defaults(func=cmd_fit)

    p_pred = sub.add_parser("predict", help="predicted-rate curve from a fit")
    p_pred.add_argument("--fit", required=True)
    p_pred.add_argument("--out", default=None)
    p_pred.add_argument("--at", default=None, help="comma-separated basin sizes")
    p_pred.add_argument("--grid-lo", type=float, default=0.01)
    p_pred.add_argument("--grid-hi", type=float, default=1.0)
    p_pred.add_argument("--grid-points", type=int, default=100)
    p_pred.set_defaults(func=cmd_predict)

    p_dec = sub.add_parser("decompose", help="2x2 treatment-dummy decomposition")
    p_dec.add_argument("--data", required=True)
    p_dec.add_argument("--out", default=None)
    p_dec.add_argument("--no-small-sample-correction", action="store_true")
    p_dec.set_defaults(func=cmd_decompose)

    p_rep = sub.add_parser("report", help="bundle basin + simulation + stats")
    p_rep.add_argument("--config", required=True)
    p_rep.add_argument("--out", default=None)
    p_rep.add_argument("--seed", type=int, default=None)
    p_rep.add_argument("--window", default=None)
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return args.func(args)
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except EstimationError as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (InvalidParameter, ConfigError, Error, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


def entry() -> None:
    sys.exit(main())
