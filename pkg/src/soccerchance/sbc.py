"""Simulation-based calibration harness.

Each replicate draws a ground truth from the prior, simulates a season,
fits it and records the rank of the true value among the posterior draws
for a handful of monitored parameters. Under a correct sampler the ranks are
uniform on ``0..L``.

The toy problem uses tighter priors than the analysis defaults: with
standard deviation 10 on the home and state effects, prior draws produce
chance rates that no real season resembles.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np
from scipy import stats

from .errors import ChanceModelError, NumericError
from .ingest import PlayerKey
from .inference import SamplerConfig, fit
from .rate_model import RatePriors
from .simulate import GroundTruth, SimConfig, SyntheticSeason, draw_ground_truth, round_robin, simulate_season
from .spatial import Centroids, CompositionPriors, Roster

logger = logging.getLogger(__name__)

# assist centroids sit at least four prior-mean sd from the touchlines so the
# on-pitch resampling barely truncates the assist mixture
TOY_ASSIST_CENTROIDS = ((-70, 80), (70, 80), (0, 60), (-40, 160), (40, 160), (0, 240), (-70, 300), (70, 300))
TOY_DELTA_CENTROIDS = ((0, -15), (15, 0), (-15, 0), (0, 15), (25, -25), (-25, -25), (0, -35), (0, 30))


@dataclass(frozen=True)
class ToySpec:
    n_teams: int = 6
    n_fixtures: int = 60
    roster_size: int = 4
    rate_priors: RatePriors = RatePriors(gamma_sd=0.3, alpha_sd=0.15, beta_sd=0.3, tau_shape=4.0, tau_rate=40.0)
    composition_priors: CompositionPriors = CompositionPriors(
        phi_concentration=1.0, kappa_concentration=1.0, sigma_scale=((1575.0, 0.0), (0.0, 1575.0)), sigma_df=10.0
    )
    assist_centroids: tuple = TOY_ASSIST_CENTROIDS
    delta_centroids: tuple = TOY_DELTA_CENTROIDS
    state_dynamics: str = "goal-coupled"
    conversion: float = 0.1
    red_card_rate: float = 0.05

    @property
    def teams(self) -> list[str]:
        return [f"T{j}" for j in range(self.n_teams)]

    def roster(self) -> Roster:
        return Roster.build(
            self.teams, [PlayerKey(f"{t}p{i}", t) for t in self.teams for i in range(self.roster_size)]
        )

    def centroids(self) -> dict[str, Centroids]:
        return {
            "assist": Centroids(np.array(self.assist_centroids, dtype=float), "assist"),
            "delta": Centroids(np.array(self.delta_centroids, dtype=float), "delta"),
        }


def monitored_names(toy: ToySpec) -> list[str]:
    return ["alpha", "beta", "gamma[t1]", f"theta[{toy.teams[0]},t1]", f"kappa_assist[{toy.teams[0]}p0,t1,1]"]


def truth_values(truth: GroundTruth, toy: ToySpec) -> np.ndarray:
    r = truth.rate
    return np.array([r.alpha, r.beta, r.gamma[0], r.theta[0, 0], truth.mixtures["assist"].kappa[0, 0, 0]])


def draw_values(draws) -> np.ndarray:
    """(L, 5) monitored values in the order of :func:`monitored_names`."""
    return np.column_stack(
        [draws.alpha, draws.beta, draws.gamma[:, 0], draws.theta[:, 0, 0], draws.kappa["assist"][:, 0, 0, 0]]
    )


def default_fitter(season: SyntheticSeason, toy: ToySpec, config: SamplerConfig, log_rate_offset=None) -> np.ndarray:
    roster = season.truth.roster
    rosters = {t: [p.player_id for p in roster.players if p.team_id == t] for t in roster.teams}
    res = fit(
        season.panel,
        season.chances,
        config,
        centroids=season.truth.centroids,
        rosters=rosters,
        log_rate_offset=log_rate_offset,
    )
    return draw_values(res.draws)


def prior_fitter(n_draws: int) -> Callable:
    """A fitter that ignores the data and returns exact prior draws (null harness)."""

    def fitter(season: SyntheticSeason, toy: ToySpec, config: SamplerConfig, log_rate_offset=None) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5BC]))
        roster, cents = toy.roster(), toy.centroids()
        return np.array(
            [
                truth_values(draw_ground_truth(roster, cents, rng, toy.rate_priors, toy.composition_priors), toy)
                for _ in range(n_draws)
            ]
        )

    return fitter


def sbc_sampler_config(toy: ToySpec, n_draws: int = 199, thin: int = 10, burn_in: int = 200, **kw) -> SamplerConfig:
    """Sampler settings for SBC: toy priors, ``n_draws`` stored draws thinned by ``thin``."""
    return SamplerConfig(
        iterations=burn_in + n_draws * thin,
        burn_in=burn_in,
        thin=thin,
        n_components=len(toy.assist_centroids),
        rate_priors=toy.rate_priors,
        composition_priors=toy.composition_priors,
        **kw,
    )


@dataclass
class SBCResult:
    names: list[str]
    ranks: np.ndarray  # (R_ok, K) ranks in 0..n_draws
    n_draws: int
    bins: int
    histograms: np.ndarray  # (K, bins)
    pvalues: np.ndarray  # (K,)
    failures: list[tuple[int, str]] = field(default_factory=list)

    def rejected(self, level: float = 0.01) -> dict[str, bool]:
        return {n: bool(p < level) for n, p in zip(self.names, self.pvalues)}

    def records(self) -> list[dict]:
        return [
            {"parameter": n, "p_value": float(p), **{f"bin{b + 1}": int(c) for b, c in enumerate(h)}}
            for n, p, h in zip(self.names, self.pvalues, self.histograms)
        ]


class SBCFailure(NumericError):
    def __init__(self, message: str, result: SBCResult):
        super().__init__(message)
        self.result = result


def rank_histograms(ranks: np.ndarray, n_draws: int, bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Bin ranks in ``0..n_draws`` into ``bins`` equal-width bins and chi-square test uniformity."""
    ranks = np.asarray(ranks)
    if (n_draws + 1) % bins:
        raise ValueError(f"{n_draws + 1} rank values do not split evenly into {bins} bins")
    width = (n_draws + 1) // bins
    hist = np.stack([np.bincount(ranks[:, k] // width, minlength=bins) for k in range(ranks.shape[1])])
    pvals = np.array([stats.chisquare(h).pvalue for h in hist])
    return hist, pvals


def sbc_run(
    toy: ToySpec,
    replicates: int,
    sampler_config: SamplerConfig,
    fitter: Callable | None = None,
    log_rate_offset=None,
    seed: int = 0,
    bins: int = 20,
    max_failure_rate: float = 0.05,
) -> SBCResult:
    """Run ``replicates`` SBC replicates.

    Replicate ``r`` seeds its ground truth and season from ``(seed, r)`` and
    its sampler from ``(seed, r)`` too, so replicates can be split across
    processes and recombined. Failed fits are recorded; the run raises
    :class:`SBCFailure` when more than ``max_failure_rate`` of them fail.
    ``log_rate_offset`` is passed to the fitter, which makes the fitted
    likelihood deliberately wrong (negative control).
    """
    fitter = fitter or default_fitter
    roster, cents = toy.roster(), toy.centroids()
    fixtures = round_robin(toy.teams, toy.n_fixtures)
    names = monitored_names(toy)
    ranks, failures = [], []
    n_draws = None
    for r in range(replicates):
        rng = np.random.default_rng(np.random.SeedSequence([seed, r]))
        truth = draw_ground_truth(roster, cents, rng, toy.rate_priors, toy.composition_priors)
        season_seed = int(rng.integers(2**31))
        fit_seed = int(rng.integers(2**31))
        try:
            season = simulate_season(
                SimConfig(
                    fixtures,
                    truth,
                    seed=season_seed,
                    state_dynamics=toy.state_dynamics,
                    conversion=toy.conversion,
                    red_card_rate=toy.red_card_rate,
                    round_locations=False,
                )
            )
            values = fitter(season, toy, replace(sampler_config, seed=fit_seed), log_rate_offset)
        except (ChanceModelError, np.linalg.LinAlgError, FloatingPointError) as exc:
            logger.warning("SBC replicate %d failed: %s", r, exc)
            failures.append((r, str(exc)))
            continue
        n_draws = len(values) if n_draws is None else n_draws
        ranks.append((values < truth_values(truth, toy)[None, :]).sum(axis=0))
    L = n_draws or sampler_config.n_stored
    rank_arr = np.array(ranks, dtype=np.int64).reshape(-1, len(names))
    hist, pvals = rank_histograms(rank_arr, L, bins) if len(rank_arr) else (np.zeros((len(names), bins)), np.full(len(names), math.nan))
    result = SBCResult(names, rank_arr, L, bins, hist, pvals, failures)
    if len(failures) > max_failure_rate * replicates:
        raise SBCFailure(f"{len(failures)} of {replicates} SBC replicates failed", result)
    return result


def sbc_from_mapping(d: Mapping) -> ToySpec:
    d = dict(d)
    if isinstance(d.get("rate_priors"), Mapping):
        d["rate_priors"] = RatePriors(**d["rate_priors"])
    if isinstance(d.get("composition_priors"), Mapping):
        cp = dict(d["composition_priors"])
        if "sigma_scale" in cp:
            cp["sigma_scale"] = tuple(tuple(r) for r in cp["sigma_scale"])
        d["composition_priors"] = CompositionPriors(**cp)
    for k in ("assist_centroids", "delta_centroids"):
        if k in d:
            d[k] = tuple(tuple(p) for p in d[k])
    return ToySpec(**d)
