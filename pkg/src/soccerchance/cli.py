"""Command line interface.

Exit codes: 0 success, 2 input or schema error, 3 numeric or inference error.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import analytics, render
from .errors import ChanceModelError, NumericError
from .inference import SamplerConfig, fit, read_draws, write_draws, write_trace_csv
from .ingest import ingest, write_records
from .sbc import ToySpec, prior_fitter, sbc_from_mapping, sbc_run, sbc_sampler_config
from .simulate import GroundTruth, SimConfig, draw_ground_truth, round_robin, simulate_season, write_season

logger = logging.getLogger("soccerchance")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


# ---------------------------------------------------------------------------
# helpers


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config must be a JSON object")
    return cfg


@contextlib.contextmanager
def _output(path: str | None):
    if path in (None, "-"):
        yield sys.stdout
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            yield fh


def _load_draws(args):
    if not args.draws:
        raise ValueError("--draws is required for this command")
    with open(args.draws) as fh:
        return read_draws(fh)


def _emit_table(table: analytics.ReportTable, args) -> None:
    fmt = args.format or "csv"
    with _output(args.out) as fh:
        if fmt == "csv":
            table.write_csv(fh)
        elif fmt == "jsonl":
            table.write_jsonl(fh)
        elif fmt == "svg":
            fh.write(render.emit_svg(table, render.SvgStyle(title=table.title)))


def _sampler_config(args, cfg: dict) -> SamplerConfig:
    d = dict(cfg.get("sampler", {}))
    for key in ("iterations", "burn_in", "thin", "workers", "chains"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    if args.seed is not None:
        d["seed"] = args.seed
    return SamplerConfig.from_dict(d)


def _parse_region(values):
    if values is None:
        raise ValueError("--region needs 2 (point) or 4 (x_min x_max y_min y_max) numbers")
    return tuple(float(v) for v in values)


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args, cfg) -> None:
    if not args.out:
        raise ValueError("--out is required for fit")
    with open(args.events) as ev, open(args.fixtures) as fx:
        data = ingest(ev, fx, cfg.get("schema"))
    if data.events.errors:
        logger.warning("skipped %d malformed event rows", len(data.events.errors))
    config = _sampler_config(args, cfg)
    res = fit(data.panel, data.chances, config)
    with _output(args.out) as fh:
        write_draws(res.draws, fh)
    if args.trace:
        with _output(args.trace) as fh:
            write_trace_csv(res.draws, fh)
    if args.diagnostics:
        with _output(args.diagnostics) as fh:
            write_records(res.diagnostics.records(), fh, "jsonl" if args.diagnostics.endswith(".jsonl") else "csv")
    acc = ", ".join(f"{k}={v:.2f}" for k, v in sorted(res.draws.acceptance.items()))
    logger.info("stored %d draws; acceptance %s", len(res.draws), acc)


def cmd_simulate(args, cfg) -> None:
    if not args.out:
        raise ValueError("--out (a directory) is required for simulate")
    seed = args.seed or 0
    toy = sbc_from_mapping(cfg.get("toy", {})) if "toy" in cfg else ToySpec()
    n_teams = args.n_teams or toy.n_teams
    n_fixtures = args.n_fixtures or toy.n_fixtures
    toy = dataclasses.replace(toy, n_teams=n_teams, n_fixtures=n_fixtures)
    truth = draws = None
    if args.draws:
        draws = _load_draws(args)
        teams = list(draws.teams)
    elif args.truth:
        with open(args.truth) as fh:
            truth = GroundTruth.from_dict(json.load(fh))
        teams = list(truth.teams)
    else:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7B]))
        truth = draw_ground_truth(toy.roster(), toy.centroids(), rng, toy.rate_priors, toy.composition_priors)
        teams = toy.teams
    fixtures = round_robin(teams, n_fixtures)
    season = simulate_season(
        SimConfig(
            fixtures,
            truth,
            draws,
            seed=seed,
            state_dynamics=args.state_dynamics,
            conversion=args.conversion,
            red_card_rate=args.red_card_rate,
        )
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "events.csv", "w", newline="") as e, open(out / "fixtures.csv", "w", newline="") as f, open(
        out / "truth.json", "w"
    ) as t:
        write_season(season, e, f, t)
    logger.info("simulated %d fixtures, %d chances into %s", len(fixtures), len(season.chances), out)


def cmd_sbc(args, cfg) -> None:
    toy = sbc_from_mapping(cfg.get("toy", {}))
    sampler = dict(cfg.get("sampler", {}))
    config = sbc_sampler_config(toy, n_draws=args.n_draws, thin=args.thin, **sampler)
    fitter = prior_fitter(args.n_draws) if args.null else None
    offset = math.log(2.0) if args.negative_control else None
    res = sbc_run(toy, args.replicates, config, fitter=fitter, log_rate_offset=offset, seed=args.seed or 0)
    fmt = args.format or "csv"
    with _output(args.out) as fh:
        write_records(res.records(), fh, "jsonl" if fmt == "jsonl" else "csv")
    for name, p in zip(res.names, res.pvalues):
        logger.info("%s: chi-square p = %.4f", name, p)


def cmd_report(args, cfg) -> None:
    draws = _load_draws(args)
    kind = args.report
    if kind == "team-abilities":
        table = analytics.team_ability_table(draws)
    elif kind == "home-effect":
        table = analytics.home_effect_summary(draws)
    elif kind == "radar":
        table = analytics.radar_weights(draws, args.player, args.space)
    elif kind == "involvement":
        table = analytics.involvement_probability(
            draws, args.team, args.block, _parse_region(args.region), args.role, args.resolution
        )
    else:  # surface
        surface = _surface(draws, args)
        fmt = args.format or "csv"
        with _output(args.out) as fh:
            if fmt == "svg":
                fh.write(render.emit_svg(surface))
            else:
                write_records(surface.records(), fh, fmt)
        return
    _emit_table(table, args)


def _surface(draws, args) -> analytics.SurfaceGrid:
    grid = analytics.standard_grid(draws, args.space, n=args.grid)
    if args.bounds:
        x0, x1, y0, y1 = (float(v) for v in args.bounds)
        grid = analytics.GridSpec(x0, x1, y0, y1, args.grid, args.grid)
    return analytics.density_surface(draws, args.player, args.block, args.space, grid)


def cmd_render(args, cfg) -> None:
    what = args.what
    if what == "pitch":
        svg = render.emit_svg(None)
    elif what == "voronoi":
        draws = _load_draws(args)
        cents = draws.centroids[args.space]
        weights = None
        if args.player:
            i = analytics.player_index(draws, args.player)
            weights = draws.kappa[args.space][:, i, args.block - 1].mean(axis=0)
        bounds = render.PITCH_BOUNDS if args.space == "assist" else analytics.SPACE_BOUNDS["delta"]
        svg = render.emit_svg(render.VoronoiMap(cents, weights, bounds))
    else:
        svg = render.emit_svg(_surface(_load_draws(args), args))
    with _output(args.out) as fh:
        fh.write(svg)


# ---------------------------------------------------------------------------
# parser


def _add_globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="JSON configuration file")
    p.add_argument("--seed", type=int, default=d)
    p.add_argument("--draws", default=d, help="posterior draws (JSONL)")
    p.add_argument("--out", default=d, help="output path ('-' for stdout)")
    p.add_argument("--format", choices=("csv", "jsonl", "svg"), default=d)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="soccerchance", description=__doc__.splitlines()[0])
    _add_globals(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="run the sampler on an event table")
    _add_globals(p, True)
    p.add_argument("--events", required=True)
    p.add_argument("--fixtures", required=True)
    p.add_argument("--iterations", type=int)
    p.add_argument("--burn-in", type=int, dest="burn_in")
    p.add_argument("--thin", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--chains", type=int)
    p.add_argument("--trace", help="also write a long-format trace CSV")
    p.add_argument("--diagnostics", help="also write per-parameter diagnostics")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="simulate a synthetic season")
    _add_globals(p, True)
    p.add_argument("--truth", help="ground-truth JSON sidecar to reuse")
    p.add_argument("--n-teams", type=int, dest="n_teams")
    p.add_argument("--n-fixtures", type=int, dest="n_fixtures")
    p.add_argument("--state-dynamics", choices=("static", "goal-coupled"), default="static", dest="state_dynamics")
    p.add_argument("--conversion", type=float, default=0.1)
    p.add_argument("--red-card-rate", type=float, default=0.0, dest="red_card_rate")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sbc", help="simulation-based calibration")
    _add_globals(p, True)
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--n-draws", type=int, default=199, dest="n_draws")
    p.add_argument("--thin", type=int, default=10)
    p.add_argument("--negative-control", action="store_true", help="fit with every rate doubled")
    p.add_argument("--null", action="store_true", help="replace the sampler by exact prior draws")
    p.set_defaults(func=cmd_sbc)

    p = sub.add_parser("report", help="posterior summaries")
    _add_globals(p, True)
    p.add_argument("report", choices=("team-abilities", "home-effect", "radar", "surface", "involvement"))
    p.add_argument("--player", help="player id or id@team")
    p.add_argument("--team")
    p.add_argument("--space", choices=("assist", "delta"), default="assist")
    p.add_argument("--block", type=int, default=1)
    p.add_argument("--role", choices=("assist", "chance"), default="assist")
    p.add_argument("--region", nargs="+", help="x y, or x_min x_max y_min y_max")
    p.add_argument("--resolution", type=int, default=50)
    p.add_argument("--grid", type=int, default=100, help="surface resolution per axis")
    p.add_argument("--bounds", nargs=4, help="surface rectangle x_min x_max y_min y_max")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("render", help="SVG output")
    _add_globals(p, True)
    p.add_argument("kind", choices=("svg",))
    p.add_argument("--what", choices=("pitch", "voronoi", "surface"), default="pitch")
    p.add_argument("--player")
    p.add_argument("--space", choices=("assist", "delta"), default="assist")
    p.add_argument("--block", type=int, default=1)
    p.add_argument("--grid", type=int, default=100)
    p.add_argument("--bounds", nargs=4)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _load_config(args.config)
        args.func(args, cfg)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ChanceModelError, KeyError, ValueError, OSError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
