"""Chance composition: who assists, who takes the chance, and from where.

Assist and chance players are categorical draws from per-(team, block)
probability vectors ``phi``. Assist locations and assist-to-chance offsets
each follow an ``M``-component Gaussian mixture whose means are fixed k-means
centroids; the per-(player, block) weights ``kappa`` and the shared
per-component covariances ``sigma`` are inferred.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp

from .errors import DataIntegrityError, DomainError, NumericError
from .ingest import N_BLOCKS, ChanceObservation, PlayerKey

logger = logging.getLogger(__name__)

SPACES = ("assist", "delta")
DEFAULT_COMPONENTS = 8
LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class Centroids:
    mu: np.ndarray  # (M, 2), frozen after construction
    space: str = "assist"

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1, 2)
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        if self.space not in SPACES:
            raise DomainError(f"unknown space {self.space!r}")

    @property
    def M(self) -> int:
        return len(self.mu)

    def __len__(self):
        return self.M

    def to_csv(self, fh: IO[str]) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["component", "x", "y", "space_tag"])
        for m, (x, y) in enumerate(self.mu, start=1):
            writer.writerow([m, repr(float(x)), repr(float(y)), self.space])

    @staticmethod
    def from_csv(fh: IO[str] | str) -> dict[str, "Centroids"]:
        """Read one or both spaces from a centroid CSV."""
        if isinstance(fh, str):
            fh = io.StringIO(fh)
        rows: dict[str, list[tuple[int, float, float]]] = {}
        for row in csv.DictReader(fh):
            rows.setdefault(row["space_tag"], []).append(
                (int(row["component"]), float(row["x"]), float(row["y"]))
            )
        out = {}
        for space, items in rows.items():
            items.sort()
            if [c for c, _, _ in items] != list(range(1, len(items) + 1)):
                raise DataIntegrityError(f"centroid components for {space} are not 1..M")
            out[space] = Centroids(np.array([[x, y] for _, x, y in items]), space)
        return out

    def checksum(self) -> str:
        import hashlib

        return hashlib.sha256(np.ascontiguousarray(self.mu).tobytes() + self.space.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# k-means


def _kmeans_pp(points: np.ndarray, M: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = np.empty((M, 2))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for m in range(1, M):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[m] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centers[m]) ** 2, axis=1))
    return centers


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)


def kmeans(
    points,
    M: int = DEFAULT_COMPONENTS,
    seed: int = 0,
    max_iter: int = 200,
    space: str = "assist",
) -> Centroids:
    """Lloyd's algorithm with k-means++ seeding.

    Stops when no assignment changes or after ``max_iter`` iterations.
    Empty clusters are re-seeded at the point farthest from its centroid.
    Centroids are returned sorted by ``(y, x)``.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(points) < M:
        raise DomainError(f"k-means needs at least M={M} points, got {len(points)}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(points, M, rng)
    labels = np.full(len(points), -1)
    for _ in range(max_iter):
        d2 = _sq_dists(points, centers)
        new = d2.argmin(axis=1)
        counts = np.bincount(new, minlength=M)
        for m in np.flatnonzero(counts == 0):
            own = d2[np.arange(len(points)), new]
            own[counts[new] <= 1] = -1.0
            far = int(own.argmax())
            counts[new[far]] -= 1
            centers[m] = points[far]
            new[far] = m
            counts[m] = 1
        if np.array_equal(new, labels):
            break
        labels = new
        for m in range(M):
            centers[m] = points[labels == m].mean(axis=0)
    order = np.lexsort((centers[:, 0], centers[:, 1]))
    return Centroids(centers[order], space)


# ---------------------------------------------------------------------------
# Gaussian mixture densities


def _chol_terms(sigma: np.ndarray):
    """Determinant and inverse of a stack of 2x2 covariances."""
    sigma = np.asarray(sigma, dtype=float).reshape(-1, 2, 2)
    a, b, c, d = sigma[:, 0, 0], sigma[:, 0, 1], sigma[:, 1, 0], sigma[:, 1, 1]
    det = a * d - b * c
    bad = ~(det > 0) | ~(a > 0) | ~np.isfinite(det)
    if bad.any():
        m = int(np.flatnonzero(bad)[0]) + 1
        raise NumericError(f"covariance of component {m} is singular or not positive-definite")
    return det, a, 0.5 * (b + c), d


def component_log_densities(points, mu, sigma) -> np.ndarray:
    """``log N(point; mu_m, sigma_m)`` for every point and component, shape ``(n, M)``."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    mu = np.asarray(mu, dtype=float).reshape(-1, 2)
    det, a, b, d = _chol_terms(sigma)
    dx = points[:, None, 0] - mu[None, :, 0]
    dy = points[:, None, 1] - mu[None, :, 1]
    quad = (d * dx * dx - 2 * b * dx * dy + a * dy * dy) / det
    return -LOG_2PI - 0.5 * np.log(det) - 0.5 * quad


def _centroid_array(centroids) -> np.ndarray:
    return centroids.mu if isinstance(centroids, Centroids) else np.asarray(centroids, dtype=float)


def gmm_log_density(point, kappa_vec, centroids, sigma) -> float:
    """``log sum_m kappa_m N(point; mu_m, sigma_m)`` via log-sum-exp."""
    mu = _centroid_array(centroids)
    kappa_vec = np.asarray(kappa_vec, dtype=float)
    if kappa_vec.shape != (len(mu),) or np.shape(sigma)[0] != len(mu):
        raise DomainError("kappa, centroids and sigma disagree on the number of components")
    logc = component_log_densities(point, mu, sigma)[0]
    with np.errstate(divide="ignore"):
        return float(logsumexp(logc + np.log(kappa_vec)))


def gmm_density_grid(points, kappa, mu, sigma) -> np.ndarray:
    """Mixture density at many points; ``kappa`` may be ``(M,)`` or ``(n, M)``."""
    dens = np.exp(component_log_densities(points, mu, sigma))
    return dens @ kappa if np.ndim(kappa) == 1 else np.sum(dens * kappa, axis=1)


def assignment_probabilities(point, kappa_vec, centroids, sigma) -> np.ndarray:
    """Posterior probability of each component having produced ``point``."""
    mu = _centroid_array(centroids)
    logc = component_log_densities(point, mu, sigma)[0]
    with np.errstate(divide="ignore"):
        logw = logc + np.log(np.asarray(kappa_vec, dtype=float))
    if not np.isfinite(logw).any():
        warnings.warn("all mixture components have zero density at point; using uniform assignment")
        return np.full(len(mu), 1.0 / len(mu))
    p = np.exp(logw - logw.max())
    return p / p.sum()


def responsibilities(points, kappa_rows, mu, sigma) -> np.ndarray:
    """Row-normalised assignment probabilities for many points with per-point weights."""
    logc = component_log_densities(points, mu, sigma)
    with np.errstate(divide="ignore"):
        logw = logc + np.log(kappa_rows)
    top = logw.max(axis=1, keepdims=True)
    dead = ~np.isfinite(top[:, 0])
    if dead.any():
        warnings.warn(f"{dead.sum()} points have zero density under every component; using uniform assignment")
        logw[dead] = 0.0
        top[dead] = 0.0
    p = np.exp(logw - top)
    return p / p.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# conjugate updates


@dataclass
class DirichletPosterior:
    concentration: np.ndarray
    labels: tuple = ()

    @property
    def mean(self) -> np.ndarray:
        return self.concentration / self.concentration.sum()

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return sample_dirichlet(self.concentration, rng)


def sample_dirichlet(alpha: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Dirichlet draws along the last axis via normalised gamma variates."""
    g = rng.standard_gamma(alpha)
    s = g.sum(axis=-1, keepdims=True)
    # tiny concentrations can underflow every gamma draw; fall back to one-hot on the largest
    if np.any(s == 0):
        flat = g.reshape(-1, g.shape[-1])
        a = np.broadcast_to(alpha, g.shape).reshape(-1, g.shape[-1])
        zero = flat.sum(axis=1) == 0
        flat[zero, a[zero].argmax(axis=1)] = 1.0
        g = flat.reshape(g.shape)
        s = g.sum(axis=-1, keepdims=True)
    return g / s


def _dirichlet_update(counts, prior_concentration: float) -> DirichletPosterior:
    if prior_concentration <= 0:
        raise DomainError("prior concentration must be positive")
    labels: tuple = ()
    if isinstance(counts, Mapping):
        labels = tuple(counts)
        counts = [counts[k] for k in labels]
    counts = np.asarray(counts, dtype=float)
    if (counts < 0).any():
        raise DomainError("counts must be non-negative")
    return DirichletPosterior(prior_concentration + counts, labels)


def update_phi(counts, prior_concentration: float = 1.0) -> DirichletPosterior:
    """Conjugate Dirichlet posterior for one (team, block) player-probability vector."""
    return _dirichlet_update(counts, prior_concentration)


def update_kappa(assignment_counts, prior_concentration: float = 1.0) -> DirichletPosterior:
    """Conjugate Dirichlet posterior for one (player, block) mixture-weight vector."""
    return _dirichlet_update(assignment_counts, prior_concentration)


def _check_spd(matrix: np.ndarray, what: str) -> None:
    if matrix.shape != (2, 2) or not np.allclose(matrix, matrix.T) or np.linalg.eigvalsh(matrix).min() <= 0:
        raise DomainError(f"{what} must be a symmetric positive-definite 2x2 matrix")


def sigma_posterior(component: int, assigned_points, centroids, prior_scale=None, prior_df: float = 2.0):
    """Inverse-Wishart posterior ``(scale, df)`` for one component's covariance.

    The scatter is taken about the fixed centroid, not the sample mean.
    ``component`` is 0-based.
    """
    if prior_scale is None:
        prior_scale = np.eye(2)
    prior_scale = np.asarray(prior_scale, dtype=float)
    _check_spd(prior_scale, "prior scale")
    if prior_df <= 1:
        raise DomainError("prior degrees of freedom must exceed 1 in two dimensions")
    mu = _centroid_array(centroids)[component]
    x = np.asarray(assigned_points, dtype=float).reshape(-1, 2) - mu
    return prior_scale + x.T @ x, prior_df + len(x)


def _inv2(m: np.ndarray) -> np.ndarray:
    a, b, d = m[..., 0, 0], m[..., 0, 1], m[..., 1, 1]
    det = a * d - b * b
    out = np.empty_like(m)
    out[..., 0, 0] = d / det
    out[..., 1, 1] = a / det
    out[..., 0, 1] = out[..., 1, 0] = -b / det
    return out


def sample_inverse_wishart(scale: np.ndarray, df, rng: np.random.Generator) -> np.ndarray:
    """Inverse-Wishart draws for a stack of 2x2 scales via the Bartlett decomposition.

    ``scale`` is ``(2, 2)`` or ``(K, 2, 2)``; ``df`` is a scalar or length-K.
    The precision ``W = L A A' L'`` is Wishart with ``L = chol(scale^-1)``.
    The draw is formed as the Gram matrix ``M' M`` with ``M = (L A)^-1`` so it
    is exactly symmetric and positive semi-definite in floating point.
    """
    scale = np.asarray(scale, dtype=float)
    single = scale.ndim == 2
    scale = scale.reshape(-1, 2, 2)
    k = len(scale)
    df = np.broadcast_to(np.asarray(df, dtype=float), (k,))
    L = np.linalg.cholesky(_inv2(0.5 * (scale + scale.transpose(0, 2, 1))))
    A = np.zeros((k, 2, 2))
    A[:, 0, 0] = np.sqrt(rng.chisquare(df))
    A[:, 1, 1] = np.sqrt(rng.chisquare(df - 1.0))
    A[:, 1, 0] = rng.standard_normal(k)
    LA = L @ A
    # inverse of a lower-triangular 2x2
    M = np.zeros_like(LA)
    M[:, 0, 0] = 1.0 / LA[:, 0, 0]
    M[:, 1, 1] = 1.0 / LA[:, 1, 1]
    M[:, 1, 0] = -LA[:, 1, 0] / (LA[:, 0, 0] * LA[:, 1, 1])
    draw = M.transpose(0, 2, 1) @ M
    return draw[0] if single else draw


def update_sigma(
    component: int,
    assigned_points,
    centroids,
    prior_scale=None,
    prior_df: float = 2.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Draw one component covariance from its inverse-Wishart full conditional."""
    scale, df = sigma_posterior(component, assigned_points, centroids, prior_scale, prior_df)
    return sample_inverse_wishart(scale, df, rng if rng is not None else np.random.default_rng())


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class Roster:
    """All player keys, grouped by team; a team's support is its observed players."""

    teams: tuple[str, ...]
    players: tuple[PlayerKey, ...]
    team_of: np.ndarray = field(repr=False)
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self._index = {p: i for i, p in enumerate(self.players)}

    @classmethod
    def build(cls, teams: Sequence[str], players: Iterable[PlayerKey]) -> "Roster":
        teams = tuple(teams)
        lookup = {t: i for i, t in enumerate(teams)}
        players = tuple(sorted(set(players), key=lambda p: (lookup.get(p.team_id, -1), p.player_id)))
        missing = {p.team_id for p in players} - set(teams)
        if missing:
            raise DataIntegrityError(f"players reference unknown teams {sorted(missing)}")
        return cls(teams, players, np.array([lookup[p.team_id] for p in players], dtype=np.int64))

    @classmethod
    def from_chances(cls, teams: Sequence[str], chances: Iterable[ChanceObservation]) -> "Roster":
        keys = []
        for c in chances:
            keys.append(c.assist_player)
            keys.append(c.chance_player)
        return cls.build(teams, keys)

    def __len__(self):
        return len(self.players)

    def index(self, player: PlayerKey) -> int:
        try:
            return self._index[player]
        except KeyError:
            raise KeyError(f"unknown player {player}") from None

    def members(self, team: str) -> np.ndarray:
        return np.flatnonzero(self.team_of == self.teams.index(team))

    def team_sizes(self) -> np.ndarray:
        return np.bincount(self.team_of, minlength=len(self.teams))


@dataclass
class PlayerDist:
    """Per-player probabilities (P, B); entries of one team sum to 1 in every block."""

    roster: Roster
    phi_assist: np.ndarray
    phi_chance: np.ndarray

    @classmethod
    def uniform(cls, roster: Roster, n_blocks: int = N_BLOCKS) -> "PlayerDist":
        sizes = roster.team_sizes()[roster.team_of].astype(float)
        phi = np.repeat((1.0 / sizes)[:, None], n_blocks, axis=1)
        return cls(roster, phi, phi.copy())

    def vector(self, team: str, block: int, role: str = "assist") -> np.ndarray:
        phi = self.phi_assist if role == "assist" else self.phi_chance
        return phi[self.roster.members(team), block - 1]


@dataclass
class MixtureParams:
    kappa: np.ndarray  # (P, B, M)
    sigma: np.ndarray  # (M, 2, 2), shared by all players and blocks
    space: str = "assist"

    @classmethod
    def uniform(cls, n_players: int, M: int = DEFAULT_COMPONENTS, n_blocks: int = N_BLOCKS, space="assist"):
        return cls(np.full((n_players, n_blocks, M), 1.0 / M), np.tile(np.eye(2), (M, 1, 1)), space)


# ---------------------------------------------------------------------------
# log posterior of the composition model


def dirichlet_logpdf(x: np.ndarray, alpha: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), x.shape)
    with np.errstate(divide="ignore"):
        terms = np.where(alpha == 1.0, 0.0, (alpha - 1.0) * np.log(x))
    return float(gammaln(alpha.sum(axis=-1)).sum() - gammaln(alpha).sum() + terms.sum())


def inverse_wishart_logpdf(sigma: np.ndarray, scale: np.ndarray, df: float) -> float:
    return float(stats.invwishart.logpdf(sigma, df=df, scale=scale))


@dataclass(frozen=True)
class CompositionPriors:
    phi_concentration: float = 1.0
    kappa_concentration: float = 1.0
    sigma_scale: tuple = ((1.0, 0.0), (0.0, 1.0))
    sigma_df: float = 2.0

    @property
    def sigma_scale_matrix(self) -> np.ndarray:
        return np.array(self.sigma_scale, dtype=float)


def composition_log_prior(
    phi: PlayerDist,
    kappa: Mapping[str, MixtureParams],
    priors: CompositionPriors = CompositionPriors(),
) -> float:
    roster = phi.roster
    lp = 0.0
    n_blocks = phi.phi_assist.shape[1]
    for t in range(len(roster.teams)):
        members = np.flatnonzero(roster.team_of == t)
        if len(members) == 0:
            continue
        for arr in (phi.phi_assist, phi.phi_chance):
            for r in range(n_blocks):
                lp += dirichlet_logpdf(arr[members, r], priors.phi_concentration)
    scale = priors.sigma_scale_matrix
    for mix in kappa.values():
        lp += dirichlet_logpdf(mix.kappa, priors.kappa_concentration)
        for s in mix.sigma:
            lp += inverse_wishart_logpdf(s, scale, priors.sigma_df)
    return lp


def composition_log_likelihood_terms(
    phi: PlayerDist,
    mixtures: Mapping[str, MixtureParams],
    centroids: Mapping[str, Centroids],
    observations: Sequence[ChanceObservation],
) -> np.ndarray:
    """Per-observation likelihood terms, shape ``(n, 4)``:
    assist player, chance player, assist location, offset."""
    roster = phi.roster
    n = len(observations)
    out = np.zeros((n, 4))
    if n == 0:
        return out
    try:
        a = np.array([roster.index(o.assist_player) for o in observations])
        c = np.array([roster.index(o.chance_player) for o in observations])
    except KeyError as exc:
        raise DataIntegrityError(f"observation references a player outside the roster: {exc}") from None
    r = np.array([o.block - 1 for o in observations])
    xa = np.array([[o.assist_loc.x, o.assist_loc.y] for o in observations])
    xd = np.array([[o.delta.dx, o.delta.dy] for o in observations])
    with np.errstate(divide="ignore"):
        out[:, 0] = np.log(phi.phi_assist[a, r])
        out[:, 1] = np.log(phi.phi_chance[c, r])
        for col, space, pts, who in ((2, "assist", xa, a), (3, "delta", xd, c)):
            mix = mixtures[space]
            logc = component_log_densities(pts, centroids[space].mu, mix.sigma)
            out[:, col] = logsumexp(logc + np.log(mix.kappa[who, r]), axis=1)
    return out


def composition_log_posterior(
    phi: PlayerDist,
    mixtures: Mapping[str, MixtureParams],
    centroids: Mapping[str, Centroids],
    observations: Sequence[ChanceObservation],
    priors: CompositionPriors = CompositionPriors(),
) -> float:
    """Multinoulli and mixture log-likelihoods of all observations plus log-priors."""
    terms = composition_log_likelihood_terms(phi, mixtures, centroids, observations)
    return float(terms.sum()) + composition_log_prior(phi, mixtures, priors)
