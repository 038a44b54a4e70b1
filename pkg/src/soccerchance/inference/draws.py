"""Posterior draw storage.

A run is persisted as one line-delimited JSON file: the first line is a
manifest (config, seed, data and centroid checksums, team and player
orderings, centroids); every following line holds one stored draw.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from ..errors import DataIntegrityError
from ..ingest import ChanceObservation, PlayerKey, chance_records
from ..rate_model import RateParams
from ..spatial import SPACES, Centroids, MixtureParams, PlayerDist, Roster

FORMAT_VERSION = 1


@dataclass
class PosteriorDraws:
    teams: tuple[str, ...]
    roster: Roster
    centroids: dict[str, Centroids]
    iteration: np.ndarray  # (S,)
    theta: np.ndarray  # (S, J, B)
    gamma: np.ndarray  # (S, B)
    alpha: np.ndarray  # (S,)
    beta: np.ndarray  # (S,)
    tau: np.ndarray  # (S,)
    phi_assist: np.ndarray  # (S, P, B)
    phi_chance: np.ndarray  # (S, P, B)
    kappa: dict[str, np.ndarray]  # space -> (S, P, B, M)
    sigma: dict[str, np.ndarray]  # space -> (S, M, 2, 2)
    acceptance: dict[str, float] = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.iteration)

    @property
    def n_blocks(self) -> int:
        return self.theta.shape[2]

    @property
    def players(self) -> tuple[PlayerKey, ...]:
        return self.roster.players

    @property
    def has_composition(self) -> bool:
        return len(self.roster) > 0 and bool(self.centroids)

    def rate_params(self, s: int) -> RateParams:
        return RateParams(
            self.teams,
            self.theta[s].copy(),
            self.gamma[s].copy(),
            float(self.alpha[s]),
            float(self.beta[s]),
            float(self.tau[s]),
        )

    def player_dist(self, s: int) -> PlayerDist:
        return PlayerDist(self.roster, self.phi_assist[s].copy(), self.phi_chance[s].copy())

    def mixture(self, s: int, space: str) -> MixtureParams:
        return MixtureParams(self.kappa[space][s].copy(), self.sigma[space][s].copy(), space)

    def player_index(self, player: PlayerKey) -> int:
        return self.roster.index(player)

    def subset(self, idx) -> "PosteriorDraws":
        idx = np.asarray(idx)
        return PosteriorDraws(
            self.teams,
            self.roster,
            self.centroids,
            self.iteration[idx],
            self.theta[idx],
            self.gamma[idx],
            self.alpha[idx],
            self.beta[idx],
            self.tau[idx],
            self.phi_assist[idx],
            self.phi_chance[idx],
            {k: v[idx] for k, v in self.kappa.items()},
            {k: v[idx] for k, v in self.sigma.items()},
            dict(self.acceptance),
            dict(self.manifest),
        )

    @staticmethod
    def concatenate(parts: Sequence["PosteriorDraws"]) -> "PosteriorDraws":
        first = parts[0]

        def cat(getter):
            return np.concatenate([getter(p) for p in parts], axis=0)

        return PosteriorDraws(
            first.teams,
            first.roster,
            first.centroids,
            cat(lambda p: p.iteration),
            cat(lambda p: p.theta),
            cat(lambda p: p.gamma),
            cat(lambda p: p.alpha),
            cat(lambda p: p.beta),
            cat(lambda p: p.tau),
            cat(lambda p: p.phi_assist),
            cat(lambda p: p.phi_chance),
            {k: cat(lambda p, k=k: p.kappa[k]) for k in first.kappa},
            {k: cat(lambda p, k=k: p.sigma[k]) for k in first.sigma},
            {k: float(np.mean([p.acceptance.get(k, np.nan) for p in parts])) for k in first.acceptance},
            dict(first.manifest),
        )

    # -- flat views used by diagnostics and trace export ---------------------

    def rate_matrix(self) -> tuple[list[str], np.ndarray]:
        names, cols = [], []
        for j, t in enumerate(self.teams):
            for r in range(self.n_blocks):
                names.append(f"theta[{t},t{r + 1}]")
                cols.append(self.theta[:, j, r])
        for r in range(self.n_blocks):
            names.append(f"gamma[t{r + 1}]")
            cols.append(self.gamma[:, r])
        names += ["alpha", "beta", "tau"]
        cols += [self.alpha, self.beta, self.tau]
        return names, np.column_stack(cols)

    def sigma_matrix(self) -> tuple[list[str], np.ndarray]:
        names, cols = [], []
        for space, arr in self.sigma.items():
            for m in range(arr.shape[1]):
                for (i, k) in ((0, 0), (0, 1), (1, 1)):
                    names.append(f"sigma_{space}[{m + 1}][{i},{k}]")
                    cols.append(arr[:, m, i, k])
        if not cols:
            return names, np.zeros((len(self), 0))
        return names, np.column_stack(cols)

    def monitored(self, include_sigma: bool = True) -> tuple[list[str], np.ndarray]:
        names, mat = self.rate_matrix()
        if include_sigma and self.has_composition:
            n2, m2 = self.sigma_matrix()
            names, mat = names + n2, np.hstack([mat, m2])
        return names, mat


# ---------------------------------------------------------------------------
# checksums


def data_checksum(panel, chances: Iterable[ChanceObservation]) -> str:
    h = hashlib.sha256()
    for rec in panel.records():
        h.update(json.dumps(rec, sort_keys=True).encode())
    for rec in chance_records(chances):
        h.update(json.dumps(rec, sort_keys=True).encode())
    return h.hexdigest()[:16]


def centroid_checksum(centroids: dict[str, Centroids]) -> str:
    h = hashlib.sha256()
    for space in sorted(centroids):
        h.update(centroids[space].checksum().encode())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# JSONL persistence


def _tolist(a: np.ndarray):
    return np.asarray(a, dtype=float).tolist()


def write_draws(draws: PosteriorDraws, fh: IO[str]) -> None:
    manifest = dict(draws.manifest)
    manifest.update(
        {
            "record": "manifest",
            "format_version": FORMAT_VERSION,
            "teams": list(draws.teams),
            "players": [[p.player_id, p.team_id] for p in draws.roster.players],
            "centroids": {k: _tolist(c.mu) for k, c in draws.centroids.items()},
            "n_blocks": draws.n_blocks,
            "n_draws": len(draws),
            "acceptance": draws.acceptance,
        }
    )
    fh.write(json.dumps(manifest, sort_keys=True) + "\n")
    for s in range(len(draws)):
        rec = {
            "record": "draw",
            "iteration": int(draws.iteration[s]),
            "theta": _tolist(draws.theta[s]),
            "gamma": _tolist(draws.gamma[s]),
            "alpha": float(draws.alpha[s]),
            "beta": float(draws.beta[s]),
            "tau": float(draws.tau[s]),
            "phi_assist": _tolist(draws.phi_assist[s]),
            "phi_chance": _tolist(draws.phi_chance[s]),
            "kappa": {k: _tolist(v[s]) for k, v in draws.kappa.items()},
            "sigma": {k: _tolist(v[s]) for k, v in draws.sigma.items()},
        }
        fh.write(json.dumps(rec) + "\n")


def read_draws(fh: IO[str]) -> PosteriorDraws:
    lines = (line for line in fh if line.strip())
    try:
        manifest = json.loads(next(lines))
    except StopIteration:
        raise DataIntegrityError("draw file is empty") from None
    if manifest.get("record") != "manifest":
        raise DataIntegrityError("draw file does not start with a manifest")
    teams = tuple(manifest["teams"])
    roster = Roster.build(teams, [PlayerKey(p, t) for p, t in manifest["players"]])
    centroids = {k: Centroids(np.array(v), k) for k, v in manifest["centroids"].items()}
    recs = [json.loads(line) for line in lines]
    B = manifest["n_blocks"]
    P = len(roster)
    S = len(recs)

    def stack(key, shape):
        if S == 0:
            return np.zeros((0,) + shape)
        return np.array([r[key] for r in recs], dtype=float).reshape((S,) + shape)

    M = {k: len(c) for k, c in centroids.items()}
    draws = PosteriorDraws(
        teams=teams,
        roster=roster,
        centroids=centroids,
        iteration=np.array([r["iteration"] for r in recs], dtype=np.int64),
        theta=stack("theta", (len(teams), B)),
        gamma=stack("gamma", (B,)),
        alpha=stack("alpha", ()),
        beta=stack("beta", ()),
        tau=stack("tau", ()),
        phi_assist=stack("phi_assist", (P, B)),
        phi_chance=stack("phi_chance", (P, B)),
        kappa={
            k: np.array([r["kappa"][k] for r in recs], dtype=float).reshape(S, P, B, M[k]) for k in centroids
        },
        sigma={k: np.array([r["sigma"][k] for r in recs], dtype=float).reshape(S, M[k], 2, 2) for k in centroids},
        acceptance=manifest.get("acceptance", {}),
        manifest={k: v for k, v in manifest.items() if k not in ("record", "players", "centroids")},
    )
    return draws


def write_trace_csv(draws: PosteriorDraws, fh: IO[str], include_sigma: bool = False) -> None:
    """Long-format trace: one ``(iteration, parameter, value)`` row per draw and parameter."""
    names, mat = draws.monitored(include_sigma=include_sigma)
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["iteration", "parameter", "value"])
    for s in range(len(draws)):
        it = int(draws.iteration[s])
        for j, nm in enumerate(names):
            writer.writerow([it, nm, repr(float(mat[s, j]))])


__all__ = [
    "PosteriorDraws",
    "SPACES",
    "centroid_checksum",
    "data_checksum",
    "read_draws",
    "write_draws",
    "write_trace_csv",
]
