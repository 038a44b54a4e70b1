"""Gibbs sampler for the joint chance-count and chance-composition model.

Each iteration updates five conditionally independent groups:

0. rate parameters (block-wise abilities, home effects, alpha/beta by
   adaptive random-walk Metropolis; the ability variance by log-scale MH),
1. assist-player probabilities (conjugate Dirichlet),
2. chance-player probabilities (conjugate Dirichlet),
3. assist-location mixture (latent assignments, weights, covariances),
4. offset mixture (same).

Every group draws from its own RNG stream keyed by ``(seed, chain,
iteration, group)``, so running groups on a thread pool gives the same draws
as running them in order. Within a mixture group the latent assignments are
drawn first; weights and covariances are drawn only after all assignments
are complete.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from ..errors import DomainError, InitializationError
from ..ingest import N_BLOCKS, X_MAX, Y_MAX, BlockPanel, ChanceObservation, PlayerKey
from ..rate_model import (
    FreeLayout,
    RateData,
    RatePriors,
    compile_panel,
    fisher_information,
    gamma_logpdf,
    normal_logpdf,
)
from ..spatial import (
    DEFAULT_COMPONENTS,
    SPACES,
    Centroids,
    CompositionPriors,
    Roster,
    kmeans,
    responsibilities,
    sample_dirichlet,
    sample_inverse_wishart,
)
from .diagnostics import ChainDiagnostics, summarise
from .draws import PosteriorDraws, centroid_checksum, data_checksum
from .kernels import AdaptiveScale, default_step, tau_log_conditional

logger = logging.getLogger(__name__)

RATE, PHI_ASSIST, PHI_CHANCE, MIX_ASSIST, MIX_DELTA = range(5)
# working-unit divisor when coordinates are rescaled
COORD_SCALE = np.array([X_MAX, Y_MAX / 2])


@dataclass
class SamplerConfig:
    iterations: int = 2000
    burn_in: int = 100
    thin: int = 1
    seed: int = 0
    rwm_initial_step: dict = field(default_factory=dict)
    adapt_target: float = 0.234
    adapt_window: int = 25
    rate_substeps: int = 1
    n_components: int = DEFAULT_COMPONENTS
    kmeans_seed: int | None = None
    rescale_coordinates: bool = False
    workers: int = 1
    chains: int = 1
    rate_priors: RatePriors = field(default_factory=RatePriors)
    composition_priors: CompositionPriors = field(default_factory=CompositionPriors)

    def __post_init__(self):
        if isinstance(self.rate_priors, Mapping):
            self.rate_priors = RatePriors(**self.rate_priors)
        if isinstance(self.composition_priors, Mapping):
            cp = dict(self.composition_priors)
            if "sigma_scale" in cp:
                cp["sigma_scale"] = tuple(tuple(r) for r in cp["sigma_scale"])
            self.composition_priors = CompositionPriors(**cp)
        if self.iterations <= 0:
            raise DomainError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise DomainError("burn_in must be in [0, iterations)")
        if self.thin < 1:
            raise DomainError("thin must be at least 1")
        if self.seed < 0:
            raise DomainError("seed must be non-negative")
        if self.workers < 1 or self.chains < 1:
            raise DomainError("workers and chains must be at least 1")
        if self.rate_substeps < 1:
            raise DomainError("rate_substeps must be at least 1")

    @property
    def n_stored(self) -> int:
        return -(-(self.iterations - self.burn_in) // self.thin)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SamplerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DomainError(f"unknown sampler config keys {sorted(unknown)}")
        return cls(**d)


def group_rng(seed: int, chain: int, iteration: int, group: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, chain, iteration, group])))


# ---------------------------------------------------------------------------
# rate parameters


class RateSampler:
    """Metropolis-within-Gibbs over (abilities per block, home effects, alpha/beta, tau)."""

    def __init__(self, data: RateData, priors: RatePriors, config: SamplerConfig):
        self.data = data
        self.priors = priors
        self.layout = FreeLayout(len(data.teams), data.n_blocks)
        self.X = self.layout.design_matrix(data)
        self.N = data.N.astype(float)
        self.vec = np.zeros(self.layout.size)
        self.tau = 1.0
        self.eta = self.X @ self.vec
        if data.offset is not None:
            self.eta = self.eta + data.offset
        lay = self.layout
        self.groups: dict[str, np.ndarray] = {}
        for r in range(data.n_blocks):
            self.groups[f"theta_t{r + 1}"] = np.arange(lay.theta_slice(r).start, lay.theta_slice(r).stop)
        self.groups["gamma"] = np.arange(lay.gamma_slice.start, lay.gamma_slice.stop)
        self.groups["alpha_beta"] = np.array([lay.alpha_index, lay.beta_index])
        # rows touched by each group, and the matching design columns
        self.rows = {}
        self.cols = {}
        for name, idx in self.groups.items():
            rows = np.flatnonzero(np.any(self.X[:, idx] != 0, axis=1))
            self.rows[name] = rows
            self.cols[name] = self.X[np.ix_(rows, idx)]
        steps = config.rwm_initial_step or {}
        self.kernels = {
            name: AdaptiveScale(float(steps.get(name, default_step(len(idx)))), config.adapt_target)
            for name, idx in self.groups.items()
        }
        self.kernels["tau"] = AdaptiveScale(float(steps.get("tau", 1.0)), config.adapt_target)
        self.chol: dict[str, np.ndarray] = {}
        self.substeps = config.rate_substeps
        self._check_initial()
        self.refresh_preconditioner()

    def _check_initial(self):
        lam = np.exp(self.eta)
        terms = {
            "likelihood": float(np.sum(self.N * self.eta - lam)),
            "theta prior": float(np.sum(normal_logpdf(self.vec[: self.layout.n_free_theta], self.tau))),
            "tau prior": gamma_logpdf(self.tau, self.priors.tau_shape, self.priors.tau_rate),
        }
        for name, value in terms.items():
            if not math.isfinite(value):
                raise InitializationError(f"log-posterior term '{name}' is not finite at the initial state")

    def refresh_preconditioner(self):
        H = fisher_information(self.vec, self.tau, self.data, self.X, self.layout, self.priors)
        for name, idx in self.groups.items():
            block = H[np.ix_(idx, idx)]
            try:
                cov = np.linalg.inv(block)
                self.chol[name] = np.linalg.cholesky(0.5 * (cov + cov.T))
            except np.linalg.LinAlgError:
                self.chol[name] = np.diag(1.0 / np.sqrt(np.diag(block)))

    def _prior_var(self, name: str) -> np.ndarray:
        p = self.priors
        if name.startswith("theta"):
            return np.full(len(self.groups[name]), self.tau)
        if name == "gamma":
            return np.full(len(self.groups[name]), p.gamma_sd**2)
        return np.array([p.alpha_sd**2, p.beta_sd**2])

    def _group_step(self, name: str, rng: np.random.Generator) -> None:
        idx, rows, Xg = self.groups[name], self.rows[name], self.cols[name]
        kernel = self.kernels[name]
        N = self.N[rows]
        base = self.eta[rows]
        v0 = self.vec[idx]
        var = self._prior_var(name)

        def log_target(eta_g, v):
            if eta_g.size and eta_g.max() > 700.0:
                return -math.inf
            return float(np.sum(N * eta_g - np.exp(eta_g))) - 0.5 * float(np.sum(v * v / var))

        cur = log_target(base, v0)
        z = self.chol[name] @ rng.standard_normal(len(idx))
        dv = kernel.step * z
        prop_eta = base + Xg @ dv
        new = log_target(prop_eta, v0 + dv)
        accepted = math.isfinite(new) and math.log(rng.random()) < new - cur
        if accepted:
            self.vec[idx] = v0 + dv
            self.eta[rows] = prop_eta
        kernel.record(accepted)

    def _tau_step(self, rng: np.random.Generator) -> None:
        free = self.vec[: self.layout.n_free_theta]
        d, ss = free.size, float(free @ free)
        p = self.priors
        kernel = self.kernels["tau"]
        cur_log = math.log(self.tau)
        prop_log = cur_log + kernel.step * rng.standard_normal()
        cur = tau_log_conditional(self.tau, ss, d, p.tau_shape, p.tau_rate) + cur_log
        new = tau_log_conditional(math.exp(prop_log), ss, d, p.tau_shape, p.tau_rate) + prop_log
        accepted = math.isfinite(new) and math.log(rng.random()) < new - cur
        if accepted:
            self.tau = math.exp(prop_log)
        kernel.record(accepted)

    def sweep(self, rng: np.random.Generator) -> None:
        for _ in range(self.substeps):
            for name in self.groups:
                self._group_step(name, rng)
            self._tau_step(rng)

    def end_adaptation(self):
        for k in self.kernels.values():
            k.freeze()
            k.reset_counts()

    def theta(self) -> np.ndarray:
        k = len(self.data.teams) - 1
        free = self.vec[: self.layout.n_free_theta].reshape(self.data.n_blocks, k).T
        return np.vstack([free, -free.sum(axis=0, keepdims=True)])


# ---------------------------------------------------------------------------
# composition


class PlayerSampler:
    """Conjugate Dirichlet draws of per-(team, block) player probabilities."""

    def __init__(self, roster: Roster, counts: np.ndarray, concentration: float):
        self.roster = roster
        self.alpha = concentration + counts  # (P, B)
        self.phi = np.zeros_like(self.alpha)
        if len(roster):
            self.phi = self.alpha / self._team_sum(self.alpha)

    def _team_sum(self, x: np.ndarray) -> np.ndarray:
        sums = np.zeros((len(self.roster.teams), x.shape[1]))
        np.add.at(sums, self.roster.team_of, x)
        return sums[self.roster.team_of]

    def sweep(self, rng: np.random.Generator) -> None:
        if not len(self.roster):
            return
        g = rng.standard_gamma(self.alpha)
        s = self._team_sum(g)
        self.phi = g / s


class MixtureSampler:
    """Data-augmentation Gibbs for one Gaussian mixture with fixed means."""

    def __init__(
        self,
        points: np.ndarray,
        cells: np.ndarray,
        n_cells: int,
        mu: np.ndarray,
        priors: CompositionPriors,
    ):
        self.points = points
        self.cells = cells
        self.n_cells = n_cells
        self.mu = mu
        self.M = len(mu)
        self.conc = priors.kappa_concentration
        self.scale = priors.sigma_scale_matrix
        self.df = priors.sigma_df
        self.kappa = np.full((n_cells, self.M), 1.0 / self.M)
        self.sigma = np.tile(np.eye(2), (self.M, 1, 1))
        if len(points):
            d2 = np.sum((points[:, None, :] - mu[None]) ** 2, axis=2)
            self.z = d2.argmin(axis=1)
        else:
            self.z = np.zeros(0, dtype=np.int64)

    def sweep(self, rng: np.random.Generator) -> None:
        n = len(self.points)
        if n:
            probs = responsibilities(self.points, self.kappa[self.cells], self.mu, self.sigma)
            u = rng.random(n)
            z = (np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1)
            self.z = np.minimum(z, self.M - 1)
        # barrier: weights and covariances use the complete assignment vector
        counts = np.bincount(self.cells * self.M + self.z, minlength=self.n_cells * self.M)
        self.kappa = sample_dirichlet(self.conc + counts.reshape(self.n_cells, self.M), rng)
        scales = np.repeat(self.scale[None], self.M, axis=0)
        n_m = np.bincount(self.z, minlength=self.M).astype(float)
        if n:
            diff = self.points - self.mu[self.z]
            outer = diff[:, :, None] * diff[:, None, :]
            scatter = np.zeros((self.M, 2, 2))
            np.add.at(scatter, self.z, outer)
            scales = scales + scatter
        self.sigma = sample_inverse_wishart(scales, self.df + n_m, rng)


# ---------------------------------------------------------------------------
# driver


class FitResult(NamedTuple):
    draws: PosteriorDraws
    diagnostics: ChainDiagnostics
    chains: list


@dataclass
class _Problem:
    data: RateData
    roster: Roster
    centroids: dict[str, Centroids]
    counts_assist: np.ndarray
    counts_chance: np.ndarray
    points: dict[str, np.ndarray]
    cells: dict[str, np.ndarray]
    checksum: str


def _prepare(panel, chances, config, centroids, rosters, log_rate_offset=None) -> _Problem:
    if not isinstance(panel, BlockPanel):
        panel = BlockPanel.from_rows(panel)
    if len(panel) == 0:
        raise DomainError("panel is empty")
    chances = list(chances)
    teams = panel.teams
    data = compile_panel(panel, teams, N_BLOCKS, log_rate_offset)
    extra: list[PlayerKey] = []
    for team, players in (rosters or {}).items():
        extra += [p if isinstance(p, PlayerKey) else PlayerKey(str(p), team) for p in players]
    roster = Roster.build(teams, [*extra, *(k for c in chances for k in (c.assist_player, c.chance_player))])
    P, B = len(roster), N_BLOCKS
    xa = np.array([[c.assist_loc.x, c.assist_loc.y] for c in chances]).reshape(-1, 2)
    xd = np.array([[c.delta.dx, c.delta.dy] for c in chances]).reshape(-1, 2)
    if P and centroids is None:
        M = config.n_components
        if len(chances) < M:
            raise DomainError(f"need at least {M} chances to build centroids, or pass centroids explicitly")
        kseed = config.seed if config.kmeans_seed is None else config.kmeans_seed
        centroids = {
            "assist": kmeans(xa, M, kseed, space="assist"),
            "delta": kmeans(xd, M, kseed, space="delta"),
        }
    centroids = dict(centroids or {})
    blocks = np.array([c.block - 1 for c in chances], dtype=np.int64)
    a_idx = np.array([roster.index(c.assist_player) for c in chances], dtype=np.int64)
    c_idx = np.array([roster.index(c.chance_player) for c in chances], dtype=np.int64)
    counts_a = np.zeros((P, B))
    counts_c = np.zeros((P, B))
    np.add.at(counts_a, (a_idx, blocks), 1.0)
    np.add.at(counts_c, (c_idx, blocks), 1.0)
    return _Problem(
        data=data,
        roster=roster,
        centroids=centroids,
        counts_assist=counts_a,
        counts_chance=counts_c,
        points={"assist": xa, "delta": xd},
        cells={"assist": a_idx * B + blocks, "delta": c_idx * B + blocks},
        checksum=data_checksum(panel, chances),
    )


def _run_chain(problem: _Problem, config: SamplerConfig, chain: int) -> PosteriorDraws:
    data, roster = problem.data, problem.roster
    P, B, J = len(roster), data.n_blocks, len(data.teams)
    cp = config.composition_priors
    rate = RateSampler(data, config.rate_priors, config)
    phi_a = PlayerSampler(roster, problem.counts_assist, cp.phi_concentration)
    phi_c = PlayerSampler(roster, problem.counts_chance, cp.phi_concentration)
    unit = COORD_SCALE if config.rescale_coordinates else np.ones(2)
    mixtures: dict[str, MixtureSampler] = {}
    if P:
        for space in SPACES:
            mixtures[space] = MixtureSampler(
                problem.points[space] / unit,
                problem.cells[space],
                P * B,
                problem.centroids[space].mu / unit,
                cp,
            )
    S = config.n_stored
    Ms = {k: m.M for k, m in mixtures.items()}
    out = dict(
        iteration=np.zeros(S, dtype=np.int64),
        theta=np.zeros((S, J, B)),
        gamma=np.zeros((S, B)),
        alpha=np.zeros(S),
        beta=np.zeros(S),
        tau=np.zeros(S),
        phi_assist=np.zeros((S, P, B)),
        phi_chance=np.zeros((S, P, B)),
    )
    kappa = {k: np.zeros((S, P, B, Ms[k])) for k in mixtures}
    sigma = {k: np.zeros((S, Ms[k], 2, 2)) for k in mixtures}
    D = np.diag(unit)

    tasks = {RATE: rate, PHI_ASSIST: phi_a, PHI_CHANCE: phi_c}
    for g, space in ((MIX_ASSIST, "assist"), (MIX_DELTA, "delta")):
        if space in mixtures:
            tasks[g] = mixtures[space]

    pool = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    s = 0
    try:
        for it in range(config.iterations):
            if it < config.burn_in and it % config.adapt_window == 0 and it > 0:
                rate.refresh_preconditioner()
            if it == config.burn_in:
                rate.end_adaptation()
            rngs = {g: group_rng(config.seed, chain, it, g) for g in tasks}
            if pool is None:
                for g, task in tasks.items():
                    task.sweep(rngs[g])
            else:
                futures = [pool.submit(task.sweep, rngs[g]) for g, task in tasks.items()]
                for f in futures:
                    f.result()
            if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
                out["iteration"][s] = it
                out["theta"][s] = rate.theta()
                out["gamma"][s] = rate.vec[rate.layout.gamma_slice]
                out["alpha"][s] = rate.vec[rate.layout.alpha_index]
                out["beta"][s] = rate.vec[rate.layout.beta_index]
                out["tau"][s] = rate.tau
                out["phi_assist"][s] = phi_a.phi
                out["phi_chance"][s] = phi_c.phi
                for k, mix in mixtures.items():
                    kappa[k][s] = mix.kappa.reshape(P, B, -1)
                    sigma[k][s] = D @ mix.sigma @ D
                s += 1
    finally:
        if pool is not None:
            pool.shutdown()

    acceptance = {k: v.acceptance_rate for k, v in rate.kernels.items()}
    return PosteriorDraws(
        teams=data.teams,
        roster=roster,
        centroids=problem.centroids if P else {},
        kappa=kappa,
        sigma=sigma,
        acceptance=acceptance,
        manifest={
            # workers only changes scheduling, never the draws
            "config": {k: v for k, v in config.to_dict().items() if k != "workers"},
            "seed": config.seed,
            "chain": chain,
            "data_checksum": problem.checksum,
            "centroid_checksum": centroid_checksum(problem.centroids) if P else None,
        },
        **out,
    )


def fit(
    panel,
    chances: Sequence[ChanceObservation] = (),
    config: SamplerConfig | None = None,
    centroids: Mapping[str, Centroids] | None = None,
    rosters: Mapping[str, Sequence] | None = None,
    log_rate_offset=None,
) -> FitResult:
    """Run the Gibbs sampler and return stored draws with chain diagnostics.

    Parameters
    ----------
    panel : BlockPanel or sequence of PanelRow
        Chance counts with covariates.
    chances : sequence of ChanceObservation
        Composition data; may be empty.
    config : SamplerConfig, optional
    centroids : mapping, optional
        ``{"assist": Centroids, "delta": Centroids}``. Built by k-means on the
        pooled chance data when omitted.
    rosters : mapping, optional
        Extra players per team (``team -> player ids``) to include in the
        player-probability support even without observations.
    log_rate_offset : float or array, optional
        Fixed term added to every row's log chance rate (an exposure offset).
    """
    config = config or SamplerConfig()
    problem = _prepare(panel, chances, config, centroids, rosters, log_rate_offset)
    runs = [_run_chain(problem, config, c) for c in range(config.chains)]
    draws = runs[0] if len(runs) == 1 else PosteriorDraws.concatenate(runs)
    names, mat = draws.monitored()
    chains = None
    if len(runs) > 1:
        chains = np.stack([r.monitored()[1] for r in runs])
    diag = summarise(names, mat, draws.acceptance, chains) if len(draws) >= 10 else ChainDiagnostics(
        {}, draws.acceptance, len(draws)
    )
    return FitResult(draws, diag, runs)


def diagnostics(draws: PosteriorDraws, include_sigma: bool = True) -> ChainDiagnostics:
    """Trace summaries, ESS and MCSE for the monitored parameters of ``draws``."""
    names, mat = draws.monitored(include_sigma=include_sigma)
    return summarise(names, mat, draws.acceptance)
