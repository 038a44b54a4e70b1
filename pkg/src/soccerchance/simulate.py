"""Forward simulation of the generative model.

For each (fixture, team, block) the number of chances is Poisson; each chance
then gets an assist player and a chance player from the team's player
probabilities, an assist location from the assist mixture and an offset from
the offset mixture.

``goal-coupled`` mode is harness machinery for exercising the game-state
covariates: each chance becomes a goal with a fixed conversion probability,
red cards occur at a fixed per-block rate, and the resulting G and R feed the
following blocks. It is not part of the fitted model.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field
from typing import IO, Mapping, Sequence

import numpy as np
from scipy.stats import poisson

from .errors import DomainError
from .ingest import (
    CHANCE,
    GOAL,
    N_BLOCKS,
    RED_CARD,
    X_MAX,
    X_MIN,
    Y_MAX,
    Y_MIN,
    BlockPanel,
    ChanceObservation,
    DeltaLocation,
    EventList,
    EventRecord,
    Fixture,
    PanelRow,
    PitchLocation,
    PlayerKey,
    write_events,
    write_fixtures,
)
from .rate_model import RateParams, RatePriors, compute_lambda
from .spatial import (
    SPACES,
    Centroids,
    CompositionPriors,
    MixtureParams,
    PlayerDist,
    Roster,
    sample_dirichlet,
    sample_inverse_wishart,
)

MAX_RESAMPLE = 100


@dataclass
class GroundTruth:
    """A complete parameter set for the generative model."""

    rate: RateParams
    players: PlayerDist
    mixtures: dict[str, MixtureParams]
    centroids: dict[str, Centroids]

    @property
    def roster(self) -> Roster:
        return self.players.roster

    @property
    def teams(self) -> tuple[str, ...]:
        return self.rate.teams

    @classmethod
    def from_draws(cls, draws, s: int) -> "GroundTruth":
        return cls(
            draws.rate_params(s),
            draws.player_dist(s),
            {k: draws.mixture(s, k) for k in draws.kappa},
            dict(draws.centroids),
        )

    def to_dict(self) -> dict:
        r = self.rate
        return {
            "teams": list(r.teams),
            "theta": r.theta.tolist(),
            "gamma": r.gamma.tolist(),
            "alpha": r.alpha,
            "beta": r.beta,
            "tau": r.tau,
            "players": [[p.player_id, p.team_id] for p in self.roster.players],
            "phi_assist": self.players.phi_assist.tolist(),
            "phi_chance": self.players.phi_chance.tolist(),
            "kappa": {k: m.kappa.tolist() for k, m in self.mixtures.items()},
            "sigma": {k: m.sigma.tolist() for k, m in self.mixtures.items()},
            "centroids": {k: c.mu.tolist() for k, c in self.centroids.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "GroundTruth":
        teams = tuple(d["teams"])
        rate = RateParams(
            teams, np.array(d["theta"]), np.array(d["gamma"]), float(d["alpha"]), float(d["beta"]), float(d["tau"])
        )
        roster = Roster.build(teams, [PlayerKey(p, t) for p, t in d["players"]])
        players = PlayerDist(roster, np.array(d["phi_assist"]), np.array(d["phi_chance"]))
        mixtures = {k: MixtureParams(np.array(d["kappa"][k]), np.array(d["sigma"][k]), k) for k in d["kappa"]}
        centroids = {k: Centroids(np.array(v), k) for k, v in d["centroids"].items()}
        return cls(rate, players, mixtures, centroids)


def draw_ground_truth(
    roster: Roster,
    centroids: Mapping[str, Centroids],
    rng: np.random.Generator,
    rate_priors: RatePriors = RatePriors(),
    composition_priors: CompositionPriors = CompositionPriors(),
    n_blocks: int = N_BLOCKS,
) -> GroundTruth:
    """Draw every parameter from its prior (the abilities via the free coordinates)."""
    J = len(roster.teams)
    tau = rng.gamma(rate_priors.tau_shape, 1.0 / rate_priors.tau_rate)
    free = rng.normal(0.0, math.sqrt(tau), size=(J - 1, n_blocks))
    theta = np.vstack([free, -free.sum(axis=0, keepdims=True)])
    rate = RateParams(
        roster.teams,
        theta,
        rng.normal(0.0, rate_priors.gamma_sd, n_blocks),
        float(rng.normal(0.0, rate_priors.alpha_sd)),
        float(rng.normal(0.0, rate_priors.beta_sd)),
        float(tau),
    )
    P = len(roster)
    phis = []
    for _ in range(2):
        g = rng.standard_gamma(np.full((P, n_blocks), composition_priors.phi_concentration))
        sums = np.zeros((J, n_blocks))
        np.add.at(sums, roster.team_of, g)
        phis.append(g / sums[roster.team_of])
    mixtures = {}
    for space in SPACES:
        M = centroids[space].M
        kappa = sample_dirichlet(np.full((P, n_blocks, M), composition_priors.kappa_concentration), rng)
        scale = np.repeat(composition_priors.sigma_scale_matrix[None], M, axis=0)
        sigma = sample_inverse_wishart(scale, composition_priors.sigma_df, rng)
        mixtures[space] = MixtureParams(kappa, sigma, space)
    return GroundTruth(rate, PlayerDist(roster, phis[0], phis[1]), mixtures, dict(centroids))


# ---------------------------------------------------------------------------
# sampling


def _on_pitch(p: np.ndarray) -> bool:
    return X_MIN <= p[0] <= X_MAX and Y_MIN <= p[1] <= Y_MAX


def _clamp(p: np.ndarray, inset: float = 0.0) -> np.ndarray:
    return np.array(
        [min(max(p[0], X_MIN + inset), X_MAX - inset), min(max(p[1], Y_MIN + inset), Y_MAX - inset)]
    )


def _mixture_draw(kappa: np.ndarray, mu: np.ndarray, sigma: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    m = int(rng.choice(len(kappa), p=kappa / kappa.sum()))
    return rng.multivariate_normal(mu[m], sigma[m], method="cholesky")


def sample_block(
    truth: GroundTruth,
    team: str,
    opponent: str,
    block: int,
    is_home: bool,
    G: int = 0,
    R: int = 0,
    seed=None,
    fixture_id: str = "sim",
) -> list[ChanceObservation]:
    """Simulate one team's chances in one block.

    Locations falling off the pitch are redrawn up to 100 times, then clamped
    to the pitch boundary.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lam = compute_lambda(truth.rate, PanelRow(fixture_id, team, opponent, block, is_home, 0, G, R))
    n = int(rng.poisson(lam))
    if n == 0:
        return []
    roster = truth.roster
    members = roster.members(team)
    if len(members) == 0:
        raise DomainError(f"team {team} has an empty roster")
    r = block - 1
    pa = truth.players.phi_assist[members, r]
    pc = truth.players.phi_chance[members, r]
    mix_a, mix_d = truth.mixtures["assist"], truth.mixtures["delta"]
    mu_a, mu_d = truth.centroids["assist"].mu, truth.centroids["delta"].mu
    out = []
    for _ in range(n):
        a = members[int(rng.choice(len(members), p=pa / pa.sum()))]
        c = members[int(rng.choice(len(members), p=pc / pc.sum()))]
        for _attempt in range(MAX_RESAMPLE):
            xa = _mixture_draw(mix_a.kappa[a, r], mu_a, mix_a.sigma, rng)
            if _on_pitch(xa):
                break
        else:
            xa = _clamp(xa)
        for _attempt in range(MAX_RESAMPLE):
            d = _mixture_draw(mix_d.kappa[c, r], mu_d, mix_d.sigma, rng)
            if _on_pitch(xa + d):
                break
        else:
            # the inset keeps assist + offset on the pitch after float round-off
            d = _clamp(xa + d, 1e-9) - xa
        out.append(
            ChanceObservation(
                fixture_id=fixture_id,
                team_id=team,
                block=block,
                assist_player=roster.players[a],
                chance_player=roster.players[c],
                assist_loc=PitchLocation(float(xa[0]), float(xa[1])),
                delta=DeltaLocation(float(d[0]), float(d[1])),
            )
        )
    return out


# ---------------------------------------------------------------------------
# seasons


@dataclass
class SimConfig:
    fixtures: Sequence[Fixture]
    truth: GroundTruth | None = None
    draws: object | None = None  # PosteriorDraws for predictive mode
    seed: int = 0
    state_dynamics: str = "static"
    conversion: float = 0.1
    red_card_rate: float = 0.0
    round_locations: bool = True

    def __post_init__(self):
        if (self.truth is None) == (self.draws is None):
            raise DomainError("give exactly one of truth or draws")
        if self.state_dynamics not in ("static", "goal-coupled"):
            raise DomainError(f"unknown state dynamics {self.state_dynamics!r}")
        if not 0 <= self.conversion <= 1 or not 0 <= self.red_card_rate <= 1:
            raise DomainError("conversion and red_card_rate must be probabilities")
        teams = set(self.truth.teams if self.truth is not None else self.draws.teams)
        for f in self.fixtures:
            if f.home not in teams or f.away not in teams:
                raise DomainError(f"fixture {f.fixture_id} uses a team without parameters")


@dataclass
class SyntheticSeason:
    events: EventList
    fixtures: list[Fixture]
    truth: GroundTruth
    panel: BlockPanel
    chances: list[ChanceObservation] = field(default_factory=list)
    draw_index: int | None = None


def _minute(block: int, rng: np.random.Generator) -> float:
    lo = (block - 1) * 15.0
    m = round(lo + 15.0 * (1.0 - rng.random()), 2)
    return max(m, lo + 0.01)


def _round_obs(obs: ChanceObservation) -> ChanceObservation:
    a = PitchLocation(float(round(obs.assist_loc.x)), float(round(obs.assist_loc.y)))
    c = obs.chance_loc
    c = PitchLocation(float(round(c.x)), float(round(c.y)))
    return ChanceObservation(
        obs.fixture_id, obs.team_id, obs.block, obs.assist_player, obs.chance_player, a,
        DeltaLocation(c.x - a.x, c.y - a.y),
    )


def simulate_season(config: SimConfig) -> SyntheticSeason:
    """Simulate every fixture's six blocks for both teams.

    Static mode holds G = R = 0. Goal-coupled mode labels chances as goals
    with probability ``conversion``, issues red cards with probability
    ``red_card_rate`` per team and block, and carries the resulting game and
    red-card states into later blocks.
    """
    draw_index = None
    truth = config.truth
    if truth is None:
        rng0 = np.random.default_rng(np.random.SeedSequence([config.seed, 0xD5]))
        draw_index = int(rng0.integers(len(config.draws)))
        truth = GroundTruth.from_draws(config.draws, draw_index)
    coupled = config.state_dynamics == "goal-coupled"
    roster = truth.roster
    events: list[EventRecord] = []
    chances: list[ChanceObservation] = []
    rows: list[PanelRow] = []
    for k, fx in enumerate(config.fixtures):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, k]))
        goals = {fx.home: 0, fx.away: 0}
        reds = {fx.home: 0, fx.away: 0}
        for block in range(1, N_BLOCKS + 1):
            half = 1 if block <= 3 else 2
            block_events = []
            for team in fx.teams:
                opp = fx.opponent(team)
                G = goals[team] - goals[opp] if coupled else 0
                R = reds[opp] - reds[team] if coupled else 0
                obs = sample_block(truth, team, opp, block, team == fx.home, G, R, rng, fx.fixture_id)
                if config.round_locations:
                    obs = [_round_obs(o) for o in obs]
                rows.append(PanelRow(fx.fixture_id, team, opp, block, team == fx.home, len(obs), G, R))
                for o in obs:
                    is_goal = coupled and rng.random() < config.conversion
                    ev = EventRecord(
                        fixture_id=fx.fixture_id,
                        date=fx.date,
                        team_id=team,
                        minute=_minute(block, rng),
                        half=half,
                        event_type=GOAL if is_goal else CHANCE,
                        event_player=o.chance_player.player_id,
                        assist_player=o.assist_player.player_id,
                        assist_loc=o.assist_loc,
                        chance_loc=o.chance_loc,
                    )
                    block_events.append((ev, o))
                if coupled and config.red_card_rate > 0 and rng.random() < config.red_card_rate:
                    members = roster.members(team)
                    who = roster.players[members[int(rng.integers(len(members)))]]
                    ev = EventRecord(fx.fixture_id, fx.date, team, _minute(block, rng), half, RED_CARD, who.player_id)
                    block_events.append((ev, None))
            # events and chances in time order, as ingest would read them back
            block_events.sort(key=lambda pair: pair[0].minute)
            for ev, o in block_events:
                events.append(ev)
                if o is not None:
                    chances.append(o)
                if ev.event_type == GOAL:
                    goals[ev.team_id] += 1
                elif ev.event_type == RED_CARD:
                    reds[ev.team_id] += 1
    # same row order as the ingest panel: fixture, home team first, block
    order = {f.fixture_id: k for k, f in enumerate(config.fixtures)}
    rows.sort(key=lambda r: (order[r.fixture_id], not r.is_home, r.block))
    return SyntheticSeason(
        EventList(events), list(config.fixtures), truth, BlockPanel.from_rows(rows), chances, draw_index
    )


def round_robin(teams: Sequence[str], n_fixtures: int | None = None, start: dt.date | None = None) -> list[Fixture]:
    """Double round-robin schedule (circle method), truncated or repeated to ``n_fixtures``."""
    teams = list(teams)
    if len(teams) < 2:
        raise DomainError("need at least two teams")
    ring = teams + ([None] if len(teams) % 2 else [])
    n = len(ring)
    rounds = []
    for r in range(n - 1):
        pairs = [(ring[i], ring[n - 1 - i]) for i in range(n // 2)]
        pairs = [(a, b) if (r + i) % 2 == 0 else (b, a) for i, (a, b) in enumerate(pairs)]
        rounds.append([p for p in pairs if None not in p])
        ring = [ring[0], ring[-1], *ring[1:-1]]
    rounds += [[(b, a) for a, b in rnd] for rnd in rounds]
    if n_fixtures is None:
        n_fixtures = sum(len(r) for r in rounds)
    start = start or dt.date(2016, 8, 13)
    out = []
    week = 0
    while len(out) < n_fixtures:
        for rnd in rounds:
            for home, away in rnd:
                if len(out) == n_fixtures:
                    break
                out.append(Fixture(f"F{len(out) + 1:05d}", home, away, start + dt.timedelta(weeks=week)))
            week += 1
            if len(out) == n_fixtures:
                break
    return out


def write_season(season: SyntheticSeason, events_fh: IO[str], fixtures_fh: IO[str], truth_fh: IO[str]) -> None:
    """Canonical event CSV, fixture CSV and a JSON ground-truth sidecar."""
    write_events(season.events, events_fh)
    write_fixtures(season.fixtures, fixtures_fh)
    json.dump(season.truth.to_dict(), truth_fh)


# ---------------------------------------------------------------------------
# posterior predictive


@dataclass
class PredictiveCounts:
    pmf: np.ndarray
    mean: float
    sd: float
    mode: int
    modes: tuple[int, ...]
    quantiles: dict[float, int]


def posterior_predictive_counts(
    draws,
    team: str,
    opponent: str,
    block: int,
    is_home: bool = False,
    G: int = 0,
    R: int = 0,
    max_count: int | None = None,
    quantiles: Sequence[float] = (0.025, 0.5, 0.975),
) -> PredictiveCounts:
    """Predictive distribution of a team's chance count in one block.

    The pmf is the average over stored draws of the Poisson pmf at each
    draw's rate. G and R are scenario inputs.
    """
    row = PanelRow("predict", team, opponent, block, is_home, 0, G, R)
    lams = np.array([compute_lambda(draws.rate_params(s), row) for s in range(len(draws))])
    mean = float(lams.mean())
    # law of total variance for a Poisson mixture
    sd = math.sqrt(float(lams.mean() + lams.var()))
    if max_count is None:
        max_count = int(math.ceil(mean + 10 * sd))
    k = np.arange(max_count + 1)
    pmf = poisson.pmf(k[None, :], lams[:, None]).mean(axis=0)
    top = pmf.max()
    modes = tuple(int(i) for i in np.flatnonzero(np.isclose(pmf, top, rtol=1e-12, atol=0)))
    cdf = np.cumsum(pmf)
    qs = {q: int(min(np.searchsorted(cdf, q), max_count)) for q in quantiles}
    return PredictiveCounts(pmf, mean, sd, modes[0], modes, qs)
