"""Metropolis kernels used inside the Gibbs sweep."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from ..errors import NumericError


class RWMStep(NamedTuple):
    value: np.ndarray
    accepted: bool
    log_target: float


def rwm_update(
    current,
    step: float,
    log_target: Callable[[np.ndarray], float],
    rng: np.random.Generator,
    current_logp: float | None = None,
    chol: np.ndarray | None = None,
) -> RWMStep:
    """One random-walk Metropolis step with a symmetric Gaussian proposal.

    The proposal is ``current + step * chol @ z`` with ``z ~ N(0, I)``; with
    ``chol`` omitted every coordinate moves independently.
    """
    current = np.asarray(current, dtype=float)
    if current_logp is None:
        current_logp = log_target(current)
    if not math.isfinite(current_logp):
        raise NumericError("log target is not finite at the current state")
    z = rng.standard_normal(current.shape)
    if chol is not None:
        z = chol @ z
    proposal = current + step * z
    prop_logp = log_target(proposal)
    log_u = math.log(rng.random())
    if math.isfinite(prop_logp) and log_u < prop_logp - current_logp:
        return RWMStep(proposal, True, prop_logp)
    return RWMStep(current, False, current_logp)


@dataclass
class AdaptiveScale:
    """Robbins-Monro adaptation of a proposal's log step size.

    ``log_step`` moves by ``(t + 1) ** -decay * (accepted - target)``; once
    frozen the step no longer changes, so the chain is a fixed-kernel MH chain.
    """

    step: float
    target: float = 0.234
    decay: float = 0.6
    frozen: bool = False
    n_proposed: int = 0
    n_accepted: int = 0
    _t: int = 0

    def record(self, accepted: bool) -> None:
        self.n_proposed += 1
        self.n_accepted += int(accepted)
        if self.frozen:
            return
        self._t += 1
        self.step *= math.exp(self._t**-self.decay * (float(accepted) - self.target))

    def freeze(self) -> None:
        self.frozen = True

    def reset_counts(self) -> None:
        self.n_proposed = self.n_accepted = 0

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_proposed if self.n_proposed else float("nan")


def default_step(dim: int) -> float:
    return 2.38 / math.sqrt(max(dim, 1))


def tau_log_conditional(tau: float, sum_sq: float, d: int, shape: float, rate: float) -> float:
    """Unnormalised log density of the ability prior variance given ``d`` free
    abilities with sum of squares ``sum_sq``::

        p(tau | theta) ∝ tau^(-d/2) exp(-sum_sq / (2 tau)) Gamma(tau; shape, rate)
    """
    if not tau > 0:
        return -math.inf
    return -0.5 * d * math.log(tau) - 0.5 * sum_sq / tau + (shape - 1.0) * math.log(tau) - rate * tau


def update_tau(
    theta_free,
    tau: float,
    rng: np.random.Generator,
    shape: float = 1.0,
    rate: float = 0.01,
    step: float = 1.0,
) -> tuple[float, bool]:
    """Log-scale random-walk MH update of the ability prior variance.

    Targets the exact full conditional (a Gamma prior on a variance is not
    conjugate). Works on ``log tau`` so the Jacobian term ``log tau`` is added.
    """
    theta_free = np.asarray(theta_free, dtype=float)
    d = theta_free.size
    sum_sq = float(np.sum(theta_free * theta_free))

    def log_target(v):
        t = math.exp(float(v[0]))
        return tau_log_conditional(t, sum_sq, d, shape, rate) + float(v[0])

    res = rwm_update(np.array([math.log(tau)]), step, log_target, rng)
    return math.exp(float(res.value[0])), res.accepted
