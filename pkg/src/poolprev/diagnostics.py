"""Rank-normalized split R-hat and bulk effective sample size."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

RHAT_LIMIT = 1.05
ESS_LIMIT = 100
MIN_DRAWS = 100


class DiagnosticsError(ValueError):
    pass


def _split(chains):
    n = chains.shape[1] // 2
    return np.concatenate([chains[:, :n], chains[:, -n:]], axis=0)


def _rank_normalize(x):
    r = stats.rankdata(x.ravel(), method="average").reshape(x.shape)
    return special.ndtri((r - 0.375) / (x.size + 0.25))


def _rhat_plain(x):
    m, n = x.shape
    means = x.mean(axis=1)
    w = x.var(axis=1, ddof=1).mean()
    b = n * means.var(ddof=1)
    var_hat = (n - 1) / n * w + b / n
    return float(np.sqrt(var_hat / w))


def _autocov(x):
    n = x.shape[-1]
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    xc = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(xc, size, axis=-1)
    return np.fft.irfft(f * np.conj(f), size, axis=-1)[..., :n] / n


def _ess_plain(x):
    """Multi-chain ESS with Geyer's initial monotone sequence."""
    m, n = x.shape
    acov = _autocov(x)
    chain_var = acov[:, 0] * n / (n - 1)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer: pair sums over lags (0,1), (2,3), ... up to the first negative pair, made monotone
    pairs = []
    for t in range(0, n - 1, 2):
        pr = rho[t] + rho[t + 1]
        if pr < 0:
            break
        pairs.append(pr)
    pairs = np.minimum.accumulate(np.array(pairs)) if pairs else np.array([1.0])
    tau = max(-1.0 + 2.0 * pairs.sum(), 1.0 / np.log10(m * n))
    return float(m * n / tau)


def split_rhat(chains):
    """max(bulk, tail) rank-normalized split R-hat for an array (chains, draws)."""
    x = _split(np.asarray(chains, dtype=float))
    if not np.isfinite(x).all() or np.all(x.var(axis=1) == 0):
        return float("nan")
    bulk = _rhat_plain(_rank_normalize(x))
    folded = np.abs(x - np.median(x))
    tail = _rhat_plain(_rank_normalize(folded))
    return max(bulk, tail)


def ess_bulk(chains):
    x = _split(np.asarray(chains, dtype=float))
    if not np.isfinite(x).all() or np.all(x.var(axis=1) == 0):
        return float("nan")
    return _ess_plain(_rank_normalize(x))


@dataclass
class ParamDiagnostic:
    rhat: float
    ess_bulk: float
    flagged: bool
    degenerate: bool = False

    def to_json(self):
        nan = lambda v: None if not np.isfinite(v) else round(float(v), 6)
        out = {"rhat": nan(self.rhat), "ess_bulk": nan(self.ess_bulk), "flagged": self.flagged}
        if self.degenerate:
            out["degenerate"] = True
        return out


@dataclass
class Diagnostics:
    params: dict
    accept_rate: list = field(default_factory=list)
    ess_evals: list = field(default_factory=list)

    @property
    def flagged(self):
        return [k for k, v in self.params.items() if v.flagged]

    @property
    def max_rhat(self):
        vals = [v.rhat for v in self.params.values() if np.isfinite(v.rhat)]
        return max(vals) if vals else float("nan")

    def to_json(self):
        return {
            "params": {k: v.to_json() for k, v in self.params.items()},
            "flagged": self.flagged,
            "accept_rate": [round(float(a), 6) for a in self.accept_rate],
            "ess_evals_per_step": [round(float(a), 6) for a in self.ess_evals],
        }


def diagnose_array(chains) -> ParamDiagnostic:
    chains = np.asarray(chains, dtype=float)
    if np.all(chains == chains.flat[0]):
        return ParamDiagnostic(float("nan"), float("nan"), True, True)
    r, e = split_rhat(chains), ess_bulk(chains)
    degenerate = not (np.isfinite(r) and np.isfinite(e))
    return ParamDiagnostic(r, e, degenerate or r > RHAT_LIMIT or e < ESS_LIMIT, degenerate)


def diagnose(draws) -> Diagnostics:
    """Convergence diagnostics for mu, sigma, ell and every latent coordinate."""
    if draws.chains < 2:
        raise DiagnosticsError("need at least 2 chains")
    if draws.n_draws < MIN_DRAWS:
        raise DiagnosticsError(f"need at least {MIN_DRAWS} draws per chain, got {draws.n_draws}")
    params = {}
    for name in ("mu", "sigma", "ell"):
        params[name] = diagnose_array(getattr(draws, name))
    for i in range(draws.W.shape[2]):
        params[f"W_{i + 1}"] = diagnose_array(draws.W[:, :, i])
    acc = [] if draws.accept_rate is None else list(draws.accept_rate)
    evals = [] if draws.ess_evals is None else list(draws.ess_evals)
    return Diagnostics(params, acc, evals)
