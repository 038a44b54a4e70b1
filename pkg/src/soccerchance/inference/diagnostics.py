"""Chain summaries: quantiles, autocorrelation-based ESS, MCSE and R-hat."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Normalised autocorrelation of each column of ``x`` (n, k), via FFT."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, n=size, axis=0)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=0)[:n]
    var = acov[0].copy()
    var[var == 0] = 1.0
    return acov / var


def effective_sample_size(x: np.ndarray) -> np.ndarray:
    """ESS per column using Geyer's initial positive sequence.

    Autocorrelations are summed in consecutive pairs until a pair sum turns
    negative. Constant columns report the chain length.
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    n, k = x.shape
    rho = autocorrelation(x)
    out = np.empty(k)
    for j in range(k):
        if np.ptp(x[:, j]) == 0:
            out[j] = n
            continue
        tau = -1.0
        for t in range(0, n - 1, 2):
            pair = rho[t, j] + rho[t + 1, j]
            if pair < 0:
                break
            tau += 2.0 * pair
        out[j] = min(n, n / max(tau, 1e-12))
    return out[0] if squeeze else out


def split_rhat(chains: np.ndarray) -> np.ndarray:
    """Potential scale reduction for ``chains`` of shape (C, n, k), split in halves."""
    chains = np.asarray(chains, dtype=float)
    if chains.ndim == 2:
        chains = chains[:, :, None]
    c, n, k = chains.shape
    half = n // 2
    parts = np.concatenate([chains[:, :half], chains[:, half : 2 * half]], axis=0)
    m, h = parts.shape[0], parts.shape[1]
    means = parts.mean(axis=1)
    W = parts.var(axis=1, ddof=1).mean(axis=0)
    B = h * means.var(axis=0, ddof=1)
    var_plus = (h - 1) / h * W + B / h
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.sqrt(var_plus / W)
    r[W == 0] = 1.0
    return r


@dataclass
class ParameterSummary:
    name: str
    mean: float
    sd: float
    q025: float
    q975: float
    ess: float
    mcse: float
    rhat: float | None = None


@dataclass
class ChainDiagnostics:
    summaries: dict[str, ParameterSummary]
    acceptance: dict[str, float] = field(default_factory=dict)
    n_draws: int = 0
    degenerate: list[str] = field(default_factory=list)

    def __getitem__(self, name: str) -> ParameterSummary:
        return self.summaries[name]

    def group_mcse(self) -> dict[str, float]:
        """Largest MCSE within each parameter group (name up to the first '[')."""
        out: dict[str, float] = {}
        for s in self.summaries.values():
            g = s.name.split("[")[0]
            out[g] = max(out.get(g, 0.0), s.mcse)
        return out

    def records(self) -> list[dict]:
        return [vars(s).copy() for s in self.summaries.values()]


def summarise(names, samples: np.ndarray, acceptance=None, chains: np.ndarray | None = None) -> ChainDiagnostics:
    """Diagnostics for ``samples`` (n, k) whose columns are named by ``names``.

    ``chains`` (C, n_c, k), when given, adds split R-hat per parameter.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    n = samples.shape[0]
    if n < 10:
        raise ValueError(f"diagnostics need at least 10 draws, got {n}")
    ess = effective_sample_size(samples)
    sd = samples.std(axis=0, ddof=1)
    q = np.quantile(samples, [0.025, 0.975], axis=0)
    rhat = split_rhat(chains) if chains is not None else None
    degenerate = [nm for nm, s in zip(names, sd) if s == 0]
    if degenerate:
        warnings.warn(f"{len(degenerate)} parameters have constant chains (e.g. {degenerate[0]})")
    out = {}
    for j, nm in enumerate(names):
        out[nm] = ParameterSummary(
            nm,
            float(samples[:, j].mean()),
            float(sd[j]),
            float(q[0, j]),
            float(q[1, j]),
            float(ess[j]),
            float(sd[j] / np.sqrt(ess[j])),
            None if rhat is None else float(rhat[j]),
        )
    return ChainDiagnostics(out, dict(acceptance or {}), n, degenerate)
