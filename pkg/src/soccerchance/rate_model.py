"""Poisson model for the number of chances a team creates in each block.

For team ``j`` against opponent ``o`` in block ``r``::

    N ~ Poisson(lambda)
    log(lambda) = theta[j, r] - theta[o, r] + home * gamma[r] + alpha * G + beta * R

Team abilities sum to zero across teams within every block. The sampler works
on ``J - 1`` free abilities per block; the last team's ability is minus the
sum of the others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammaln

from .errors import DomainError, NumericError
from .ingest import N_BLOCKS, BlockPanel, PanelRow

LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class RatePriors:
    """Prior hyperparameters. ``tau`` is the prior *variance* of the free
    abilities and carries a shape/rate Gamma prior."""

    gamma_sd: float = 10.0
    alpha_sd: float = 10.0
    beta_sd: float = 10.0
    tau_shape: float = 1.0
    tau_rate: float = 0.01


@dataclass
class RateParams:
    teams: tuple[str, ...]
    theta: np.ndarray  # (J, B)
    gamma: np.ndarray  # (B,)
    alpha: float = 0.0
    beta: float = 0.0
    tau: float = 1.0

    @classmethod
    def zeros(cls, teams: Sequence[str], n_blocks: int = N_BLOCKS, tau: float = 1.0) -> "RateParams":
        teams = tuple(teams)
        return cls(teams, np.zeros((len(teams), n_blocks)), np.zeros(n_blocks), 0.0, 0.0, tau)

    @property
    def n_blocks(self) -> int:
        return self.theta.shape[1]

    def team_index(self, team: str) -> int:
        try:
            return self.teams.index(team)
        except ValueError:
            raise KeyError(f"unknown team {team!r}") from None

    def theta_map(self) -> dict[tuple[str, int], float]:
        return {
            (t, r + 1): float(self.theta[j, r])
            for j, t in enumerate(self.teams)
            for r in range(self.n_blocks)
        }

    def copy(self) -> "RateParams":
        return replace(self, theta=self.theta.copy(), gamma=self.gamma.copy())


def compute_lambda(params: RateParams, row: PanelRow) -> float:
    """Chance rate for one panel row."""
    r = row.block - 1
    if not 0 <= r < params.n_blocks:
        raise KeyError(f"unknown block {row.block}")
    j = params.team_index(row.team_id)
    o = params.team_index(row.opponent_id)
    eta = (
        params.theta[j, r]
        - params.theta[o, r]
        + (params.gamma[r] if row.is_home else 0.0)
        + params.alpha * row.G
        + params.beta * row.R
    )
    lam = math.exp(eta) if eta < 709.0 else math.inf
    if not math.isfinite(lam) or lam <= 0.0:
        raise NumericError(f"chance rate overflowed (linear predictor {eta})")
    return lam


@dataclass
class RateData:
    """A panel compiled to integer indices for vectorised evaluation."""

    teams: tuple[str, ...]
    team: np.ndarray
    opponent: np.ndarray
    block: np.ndarray  # 0-based
    home: np.ndarray
    G: np.ndarray
    R: np.ndarray
    N: np.ndarray
    log_n_factorial: np.ndarray = field(repr=False)
    n_blocks: int = N_BLOCKS
    offset: np.ndarray | None = field(default=None, repr=False)  # fixed log-rate offset per row

    def __len__(self):
        return len(self.N)

    def block_rows(self, r: int) -> np.ndarray:
        return np.flatnonzero(self.block == r)


def compile_panel(
    panel, teams: Sequence[str] | None = None, n_blocks: int = N_BLOCKS, offset=None
) -> RateData:
    if isinstance(panel, RateData):
        return panel
    if not isinstance(panel, BlockPanel):
        panel = BlockPanel.from_rows(panel)
    if teams is None:
        teams = panel.teams
    teams = tuple(teams)
    lookup = {t: i for i, t in enumerate(teams)}
    try:
        team = np.array([lookup[t] for t in panel.team_id], dtype=np.int64)
        opp = np.array([lookup[t] for t in panel.opponent_id], dtype=np.int64)
    except KeyError as exc:
        raise KeyError(f"panel references unknown team {exc.args[0]!r}") from None
    block = np.asarray(panel.block, dtype=np.int64) - 1
    if len(block) and (block.min() < 0 or block.max() >= n_blocks):
        raise KeyError("panel references a block outside 1..%d" % n_blocks)
    N = np.asarray(panel.N, dtype=np.int64)
    if (N < 0).any():
        raise DomainError("chance counts must be non-negative")
    return RateData(
        teams=teams,
        team=team,
        opponent=opp,
        block=block,
        home=np.asarray(panel.is_home, dtype=float),
        G=np.asarray(panel.G, dtype=float),
        R=np.asarray(panel.R, dtype=float),
        N=N,
        log_n_factorial=gammaln(N + 1.0),
        n_blocks=n_blocks,
        offset=None if offset is None else np.broadcast_to(np.asarray(offset, dtype=float), N.shape).copy(),
    )


def linear_predictor(params: RateParams, data: RateData, rows: np.ndarray | None = None) -> np.ndarray:
    if params.teams != data.teams:
        raise KeyError("parameter and panel team orderings differ")
    if rows is not None:
        t, o, b = data.team[rows], data.opponent[rows], data.block[rows]
        h, G, R = data.home[rows], data.G[rows], data.R[rows]
    else:
        t, o, b, h, G, R = data.team, data.opponent, data.block, data.home, data.G, data.R
    th = params.theta
    eta = th[t, b] - th[o, b] + h * params.gamma[b] + params.alpha * G + params.beta * R
    if data.offset is not None:
        eta = eta + (data.offset if rows is None else data.offset[rows])
    return eta


def _poisson_terms(eta: np.ndarray, N: np.ndarray, log_nf: np.ndarray) -> float:
    if eta.size and eta.max() > 709.0:
        raise NumericError(f"chance rate overflowed (max linear predictor {eta.max():.3g})")
    lam = np.exp(eta)
    # np.sum uses pairwise summation, so the total is stable for a fixed row order
    return float(np.sum(N * eta - lam - log_nf))


def log_likelihood(params: RateParams, panel, rows: np.ndarray | None = None) -> float:
    """Poisson log-likelihood summed over panel rows (optionally a subset)."""
    data = compile_panel(panel, params.teams, params.n_blocks)
    if len(data) == 0:
        raise DomainError("panel is empty")
    eta = linear_predictor(params, data, rows)
    if rows is None:
        return _poisson_terms(eta, data.N, data.log_n_factorial)
    return _poisson_terms(eta, data.N[rows], data.log_n_factorial[rows])


def normal_logpdf(x, var: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return -0.5 * (LOG_2PI + math.log(var)) - 0.5 * x * x / var


def gamma_logpdf(x: float, shape: float, rate: float) -> float:
    return shape * math.log(rate) - math.lgamma(shape) + (shape - 1.0) * math.log(x) - rate * x


def free_theta(theta: np.ndarray) -> np.ndarray:
    """The ``J - 1`` free ability coordinates per block."""
    return theta[:-1, :]


def log_prior(params: RateParams, priors: RatePriors = RatePriors()) -> float:
    if not params.tau > 0:
        raise DomainError(f"tau must be positive, got {params.tau}")
    lp = float(np.sum(normal_logpdf(free_theta(params.theta), params.tau)))
    lp += float(np.sum(normal_logpdf(params.gamma, priors.gamma_sd**2)))
    lp += float(normal_logpdf(params.alpha, priors.alpha_sd**2))
    lp += float(normal_logpdf(params.beta, priors.beta_sd**2))
    lp += gamma_logpdf(params.tau, priors.tau_shape, priors.tau_rate)
    return lp


def log_posterior(params: RateParams, panel, priors: RatePriors = RatePriors()) -> float:
    return log_likelihood(params, panel) + log_prior(params, priors)


def project_sum_to_zero(raw_theta):
    """Subtract each block's mean across teams.

    Accepts a ``(J, B)`` array or a mapping ``(team, block) -> value``.
    """
    if isinstance(raw_theta, Mapping):
        by_block: dict = {}
        for (team, block), v in raw_theta.items():
            by_block.setdefault(block, []).append(v)
        for block, vals in by_block.items():
            if len(vals) < 2:
                raise DomainError(f"block {block} has fewer than two teams")
        means = {b: math.fsum(v) / len(v) for b, v in by_block.items()}
        return {(t, b): v - means[b] for (t, b), v in raw_theta.items()}
    theta = np.asarray(raw_theta, dtype=float)
    if theta.ndim != 2 or theta.shape[0] < 2:
        raise DomainError("need at least two teams per block")
    return theta - theta.mean(axis=0, keepdims=True)


# ---------------------------------------------------------------------------
# free-parameter vector used by the sampler


@dataclass(frozen=True)
class FreeLayout:
    """Packing of (free abilities, home effects, alpha, beta) into one vector.

    Layout: block-major free abilities ``[r * (J-1) + j]``, then ``gamma``
    (B entries), then ``alpha``, ``beta``.
    """

    n_teams: int
    n_blocks: int = N_BLOCKS

    @property
    def n_free_theta(self) -> int:
        return (self.n_teams - 1) * self.n_blocks

    @property
    def size(self) -> int:
        return self.n_free_theta + self.n_blocks + 2

    def theta_slice(self, r: int) -> slice:
        k = self.n_teams - 1
        return slice(r * k, (r + 1) * k)

    @property
    def gamma_slice(self) -> slice:
        return slice(self.n_free_theta, self.n_free_theta + self.n_blocks)

    @property
    def alpha_index(self) -> int:
        return self.n_free_theta + self.n_blocks

    @property
    def beta_index(self) -> int:
        return self.alpha_index + 1

    def pack(self, params: RateParams) -> np.ndarray:
        free = free_theta(params.theta).T.reshape(-1)
        return np.concatenate([free, params.gamma, [params.alpha, params.beta]])

    def unpack(self, vec: np.ndarray, teams: Sequence[str], tau: float) -> RateParams:
        k = self.n_teams - 1
        free = vec[: self.n_free_theta].reshape(self.n_blocks, k).T
        theta = np.vstack([free, -free.sum(axis=0, keepdims=True)])
        return RateParams(
            tuple(teams),
            theta,
            vec[self.gamma_slice].copy(),
            float(vec[self.alpha_index]),
            float(vec[self.beta_index]),
            tau,
        )

    def design_matrix(self, data: RateData) -> np.ndarray:
        """Row-wise derivative of the linear predictor w.r.t. the free vector."""
        n, k = len(data), self.n_teams - 1
        X = np.zeros((n, self.size))
        rows = np.arange(n)
        for idx, sign in ((data.team, 1.0), (data.opponent, -1.0)):
            base = data.block * k
            free = idx < k
            X[rows[free], base[free] + idx[free]] += sign
            last = ~free
            for j in range(k):
                X[rows[last], base[last] + j] -= sign
        X[rows, self.n_free_theta + data.block] = data.home
        X[:, self.alpha_index] = data.G
        X[:, self.beta_index] = data.R
        return X

    def prior_precision(self, tau: float, priors: RatePriors) -> np.ndarray:
        d = np.empty(self.size)
        d[: self.n_free_theta] = 1.0 / tau
        d[self.gamma_slice] = 1.0 / priors.gamma_sd**2
        d[self.alpha_index] = 1.0 / priors.alpha_sd**2
        d[self.beta_index] = 1.0 / priors.beta_sd**2
        return d


def _eta(vec, data: RateData, X: np.ndarray) -> np.ndarray:
    eta = X @ vec
    return eta if data.offset is None else eta + data.offset


def grad_log_posterior(
    vec: np.ndarray, tau: float, data: RateData, X: np.ndarray, layout: FreeLayout, priors: RatePriors
) -> np.ndarray:
    """Gradient of log-likelihood + log-prior w.r.t. the free vector (tau held fixed)."""
    lam = np.exp(_eta(vec, data, X))
    return X.T @ (data.N - lam) - layout.prior_precision(tau, priors) * vec


def fisher_information(
    vec: np.ndarray, tau: float, data: RateData, X: np.ndarray, layout: FreeLayout, priors: RatePriors
) -> np.ndarray:
    """Negative Hessian of the log-posterior w.r.t. the free vector."""
    lam = np.exp(_eta(vec, data, X))
    H = (X * lam[:, None]).T @ X
    H[np.diag_indices_from(H)] += layout.prior_precision(tau, priors)
    return H
