"""Posterior summaries: ability and home-effect tables, mixture weights,
density surfaces and player involvement probabilities.

Every function here is a pure function of the draws and the query.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import IO

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError
from .ingest import X_MAX, X_MIN, Y_MAX, Y_MIN, PlayerKey
from .spatial import component_log_densities

# (x_min, x_max, y_min, y_max) of each location space
SPACE_BOUNDS = {
    "assist": (X_MIN, X_MAX, Y_MIN, Y_MAX),
    "delta": (X_MIN - X_MAX, X_MAX - X_MIN, Y_MIN - Y_MAX, Y_MAX - Y_MIN),
}
ROLE_SPACE = {"assist": "assist", "chance": "delta"}


def _fmt(v: float) -> str:
    return format(float(v), ".10g")


@dataclass(frozen=True)
class ReportTable:
    """A labelled rectangular table with optional 95% interval per cell."""

    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    values: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    title: str = ""

    def __post_init__(self):
        object.__setattr__(self, "row_labels", tuple(self.row_labels))
        object.__setattr__(self, "col_labels", tuple(self.col_labels))
        shape = (len(self.row_labels), len(self.col_labels))
        for name in ("values", "lower", "upper"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=float)
            if arr.shape != shape:
                raise DomainError(f"{name} has shape {arr.shape}, expected {shape}")
            object.__setattr__(self, name, arr)
        if len(set(self.row_labels)) != len(self.row_labels) or len(set(self.col_labels)) != len(self.col_labels):
            raise DomainError("table labels must be unique")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def cell(self, row: str, col: str) -> float:
        return float(self.values[self.row_labels.index(row), self.col_labels.index(col)])

    def records(self) -> list[dict]:
        """One record per cell: ``row``, ``column``, ``value`` and interval bounds when present."""
        out = []
        for i, r in enumerate(self.row_labels):
            for j, c in enumerate(self.col_labels):
                rec = {"row": r, "column": c, "value": float(self.values[i, j])}
                if self.lower is not None:
                    rec["q025"] = float(self.lower[i, j])
                    rec["q975"] = float(self.upper[i, j])
                out.append(rec)
        return out

    def write_csv(self, fh: IO[str]) -> None:
        """Wide layout: a label column then one column per table column."""
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["", *self.col_labels])
        for i, r in enumerate(self.row_labels):
            w.writerow([r, *(_fmt(v) for v in self.values[i])])

    def write_jsonl(self, fh: IO[str]) -> None:
        for rec in self.records():
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _block_labels(n: int) -> list[str]:
    return [f"t{r + 1}" for r in range(n)]


def _require_draws(draws) -> None:
    if len(draws) == 0:
        raise DomainError("no posterior draws")


def team_ability_table(draws) -> ReportTable:
    """Posterior mean ability per team (rows) and block (columns) with 95% intervals."""
    _require_draws(draws)
    theta = draws.theta
    q = np.quantile(theta, [0.025, 0.975], axis=0)
    return ReportTable(
        draws.teams, _block_labels(theta.shape[2]), theta.mean(axis=0), q[0], q[1], "team ability"
    )


def home_effect_summary(draws) -> ReportTable:
    """Posterior mean and central 95% interval of the home effect in each block."""
    _require_draws(draws)
    g = draws.gamma
    vals = np.column_stack([g.mean(axis=0), np.quantile(g, 0.025, axis=0), np.quantile(g, 0.975, axis=0)])
    return ReportTable(_block_labels(g.shape[1]), ("mean", "q025", "q975"), vals, title="home effect")


def player_index(draws, player) -> int:
    if isinstance(player, str):
        player = PlayerKey.parse(player) if "@" in player else player
    if isinstance(player, str):
        hits = [i for i, p in enumerate(draws.players) if p.player_id == player]
        if len(hits) != 1:
            raise KeyError(f"player {player!r} is unknown or ambiguous; use id@team")
        return hits[0]
    return draws.roster.index(player)


def _check_space(draws, space: str) -> None:
    if space not in draws.kappa:
        raise DomainError(f"no mixture for space {space!r}; draws have {sorted(draws.kappa)}")


def radar_weights(draws, player, space: str) -> ReportTable:
    """Posterior mean mixture weights for one player: blocks as rows, components as columns."""
    _require_draws(draws)
    _check_space(draws, space)
    i = player_index(draws, player)
    k = draws.kappa[space][:, i]  # (S, B, M)
    M = k.shape[-1]
    return ReportTable(
        _block_labels(k.shape[1]), [f"c{m + 1}" for m in range(M)], k.mean(axis=0), title=f"{space} weights"
    )


# ---------------------------------------------------------------------------
# surfaces


@dataclass(frozen=True)
class GridSpec:
    """A rectangle split into ``nx`` by ``ny`` equal cells, evaluated at cell centres."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int = 100
    ny: int = 100

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise DomainError("grid has zero area")
        if self.nx < 2 or self.ny < 2:
            raise DomainError("grid resolution must be at least 2x2")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    def centres(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.x_min + (np.arange(self.nx) + 0.5) * self.dx
        ys = self.y_min + (np.arange(self.ny) + 0.5) * self.dy
        return xs, ys

    def points(self) -> np.ndarray:
        """Cell centres as ``(nx * ny, 2)``, x varying slowest."""
        xs, ys = self.centres()
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])


@dataclass(frozen=True)
class SurfaceGrid:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int
    ny: int
    values: np.ndarray  # (nx, ny)

    def __post_init__(self):
        GridSpec(self.x_min, self.x_max, self.y_min, self.y_max, self.nx, self.ny)
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.nx, self.ny):
            raise DomainError(f"values have shape {v.shape}, expected {(self.nx, self.ny)}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise DomainError("surface values must be finite and nonnegative")
        object.__setattr__(self, "values", v)

    @property
    def spec(self) -> GridSpec:
        return GridSpec(self.x_min, self.x_max, self.y_min, self.y_max, self.nx, self.ny)

    def integral(self) -> float:
        """Midpoint-rule integral over the grid."""
        return float(self.values.sum() * self.spec.cell_area)

    def records(self) -> list[dict]:
        pts = self.spec.points()
        return [{"x": float(x), "y": float(y), "density": float(v)} for (x, y), v in zip(pts, self.values.ravel())]


def standard_grid(draws, space: str, n: int = 300, width: float = 8.0) -> GridSpec:
    """Rectangle around all centroids extended by ``width`` times the largest
    component standard deviation seen in the draws."""
    _check_space(draws, space)
    mu = draws.centroids[space].mu
    sig = draws.sigma[space]
    sd = math.sqrt(float(np.max(sig[..., [0, 1], [0, 1]])))
    pad = width * sd
    return GridSpec(mu[:, 0].min() - pad, mu[:, 0].max() + pad, mu[:, 1].min() - pad, mu[:, 1].max() + pad, n, n)


def density_surfaces(draws, players, blocks, space: str, grid: GridSpec | None = None) -> dict:
    """Posterior-mean mixture densities for several players and blocks at once.

    Component densities depend on the draw only, so they are evaluated once per
    draw and combined with every requested ``kappa`` row. Memory grows with
    ``grid cells x len(players) x len(blocks)``.

    Returns
    -------
    dict
        ``(player key, block) -> SurfaceGrid``.
    """
    _require_draws(draws)
    _check_space(draws, space)
    blocks = list(blocks)
    if any(not 1 <= b <= draws.n_blocks for b in blocks):
        raise DomainError(f"block must be in 1..{draws.n_blocks}")
    idx = [player_index(draws, p) for p in players]
    grid = grid or standard_grid(draws, space)
    pts = grid.points()
    mu = draws.centroids[space].mu
    # (S, K, M) with K = players x blocks
    kap = draws.kappa[space][:, idx][:, :, np.array(blocks) - 1].reshape(len(draws), len(idx) * len(blocks), -1)
    sig = draws.sigma[space]
    total = np.zeros((len(pts), kap.shape[1]))
    for s in range(len(draws)):
        # densities, not log densities, are averaged, so underflow to 0 is harmless
        total += np.exp(component_log_densities(pts, mu, sig[s])) @ kap[s].T
    total /= len(draws)
    out = {}
    for k, (i, b) in enumerate((i, b) for i in idx for b in blocks):
        values = total[:, k].reshape(grid.nx, grid.ny)
        out[(draws.players[i], b)] = SurfaceGrid(grid.x_min, grid.x_max, grid.y_min, grid.y_max, grid.nx, grid.ny, values)
    return out


def density_surface(draws, player, block: int, space: str, grid: GridSpec | None = None) -> SurfaceGrid:
    """Posterior-mean mixture density of one player's locations in one block.

    Each draw's mixture ``sum_m kappa_m N(u; mu_m, Sigma_m)`` is evaluated at
    the grid cell centres and the results are averaged over draws.
    """
    return next(iter(density_surfaces(draws, [player], [block], space, grid).values()))


def _region_points(region, space: str, resolution: int) -> tuple[np.ndarray, float]:
    """Query points and the log cell area (0 for a point query)."""
    x0, x1, y0, y1 = SPACE_BOUNDS[space]
    region = tuple(float(v) for v in region)
    if len(region) == 2:
        x, y = region
        if not (x0 <= x <= x1 and y0 <= y <= y1):
            raise DomainError(f"point {region} lies outside the {space} space")
        return np.array([region]), 0.0
    if len(region) == 4:
        ax, bx, ay, by = region
        if not (x0 <= ax < bx <= x1 and y0 <= ay < by <= y1):
            raise DomainError(f"rectangle {region} is empty or leaves the {space} space")
        g = GridSpec(ax, bx, ay, by, resolution, resolution)
        return g.points(), math.log(g.cell_area)
    raise DomainError("region must be a point (x, y) or a rectangle (x_min, x_max, y_min, y_max)")


def involvement_probability(
    draws, team: str, block: int, region, role: str = "assist", resolution: int = 50
) -> ReportTable:
    """Probability that each player of ``team`` is the one involved in a chance at ``region``.

    Per draw, ``p_i ∝ phi_i * f_i(region)`` over the team's roster, where
    ``f_i`` is the player's mixture density at a point or its mass over a
    rectangle (midpoint sum on a ``resolution`` square grid). The reported
    value is the mean of these normalised probabilities over draws.
    ``role="assist"`` queries the assist space with assist probabilities;
    ``role="chance"`` queries the offset space with chance-taker probabilities.
    """
    _require_draws(draws)
    if role not in ROLE_SPACE:
        raise DomainError(f"role must be one of {sorted(ROLE_SPACE)}")
    space = ROLE_SPACE[role]
    _check_space(draws, space)
    if team not in draws.teams:
        raise KeyError(f"unknown team {team!r}")
    if not 1 <= block <= draws.n_blocks:
        raise DomainError(f"block must be in 1..{draws.n_blocks}")
    members = draws.roster.members(team)
    if len(members) == 0:
        raise DomainError(f"team {team} has an empty roster")
    pts, log_area = _region_points(region, space, resolution)
    r = block - 1
    phi = (draws.phi_assist if role == "assist" else draws.phi_chance)[:, members, r]  # (S, P_t)
    kap = draws.kappa[space][:, members, r]  # (S, P_t, M)
    mu = draws.centroids[space].mu
    sig = draws.sigma[space]
    S = len(draws)
    logp = np.empty((S, len(members)))
    with np.errstate(divide="ignore"):
        for s in range(S):
            logc = component_log_densities(pts, mu, sig[s])  # (n, M)
            lf = logsumexp(logc[None, :, :] + np.log(kap[s])[:, None, :], axis=2)  # (P_t, n)
            logp[s] = np.log(phi[s]) + logsumexp(lf, axis=1) + log_area
    norm = logsumexp(logp, axis=1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        raise DomainError("every player has zero density at the query region")
    probs = np.exp(logp - norm).mean(axis=0)
    probs = probs / probs.sum()
    labels = [str(draws.players[i]) for i in members]
    return ReportTable(labels, ("probability",), probs[:, None], title=f"{role} involvement")


def ranked(table: ReportTable, column: int = 0) -> list[tuple[str, float]]:
    """Rows sorted by one column, largest first (ties by label)."""
    vals = table.values[:, column]
    return sorted(zip(table.row_labels, map(float, vals)), key=lambda t: (-t[1], t[0]))


__all__ = [
    "GridSpec",
    "ReportTable",
    "SPACE_BOUNDS",
    "SurfaceGrid",
    "density_surface",
    "home_effect_summary",
    "involvement_probability",
    "radar_weights",
    "player_index",
    "ranked",
    "standard_grid",
    "team_ability_table",
]
