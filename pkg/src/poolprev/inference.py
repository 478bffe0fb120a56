"""Posterior sampling for the latent-GP prevalence model.

The latent process is whitened, ``W = L(theta) z`` with ``z ~ N(0, I)``, and
each iteration alternates

* elliptical slice sampling of ``z`` given ``(mu, sigma, ell)``, and
* random-walk Metropolis on ``(mu, log sigma, log ell)`` given ``z``.

The Metropolis proposal covariance and scale adapt during warmup only and are
frozen afterwards.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
from scipy import linalg, special
from scipy.linalg import lapack

from . import gp
from .domain import validate_dataset
from .observation import invert_pool_probability, likelihood_terms

HYPER_NAMES = ("mu", "sigma", "ell")
_LOG_2PI = math.log(2.0 * math.pi)


class SamplerError(RuntimeError):
    pass


def probit(x):
    """Standard normal CDF (the inverse-probit link)."""
    return special.ndtr(x)


@dataclass(frozen=True)
class SamplerConfig:
    seed: int
    chains: int = 4
    warmup: int = 1000
    draws: int = 1000
    thin: int = 1
    jitter: Optional[float] = None
    target_accept: float = 0.3
    ess_steps: int = 2
    mh_steps: int = 1
    fixed_sigma: Optional[float] = None
    fixed_ell: Optional[float] = None
    sample_latent: bool = True
    init_spread: float = 0.1
    threads: int = 1

    def __post_init__(self):
        if self.seed is None:
            raise ValueError("a seed is required")
        if self.chains < 1 or self.draws < 1 or self.warmup < 0 or self.thin < 1:
            raise ValueError("need chains >= 1, draws >= 1, thin >= 1 and warmup >= 0")


class PosteriorModel:
    """Log posterior over ``(mu, sigma, ell, z)`` for one dataset."""

    def __init__(self, data, priors: gp.Priors, jitter=None):
        self.grid = data.grid
        self.times = np.ascontiguousarray(data.grid.times)
        self.terms = likelihood_terms(data)
        self.priors = priors
        self.jitter = jitter
        self.data_kind = data.kind
        self._rate = data.positive_rate()

    @property
    def n(self):
        return self.times.size

    def chol(self, sigma, ell):
        return gp.build_covariance(self.times, gp.GpHyperparams(sigma, ell), self.jitter).chol

    def loglik_latent(self, f):
        return self.terms.loglik_latent(f)

    def log_posterior(self, mu, sigma, ell, z):
        lp = gp.log_prior(mu, (sigma, ell), self.priors)
        if not math.isfinite(lp):
            return -math.inf
        w = self.chol(sigma, ell) @ z
        lz = -0.5 * float(z @ z) - 0.5 * z.size * _LOG_2PI
        return lp + lz + self.loglik_latent(w + mu)

    def fisher_info(self, f):
        """Expected information about the latent value at each time when the
        latent value is ``f`` everywhere (probit link, pooled binomial blocks)."""
        t = self.terms
        p = float(special.ndtr(f))
        dens = math.exp(-0.5 * f * f) / math.sqrt(2.0 * math.pi)
        one_m = (1.0 - p) ** t.size
        pi = 1.0 - one_m
        dpi = t.size * (1.0 - p) ** (t.size - 1.0) * dens
        info = t.trials * dpi**2 / np.maximum(pi * (1.0 - pi), 1e-300)
        return np.bincount(t.tidx, weights=info, minlength=self.n)

    def initial_mu(self):
        rate, m = self._rate
        total = max(self.terms.trials.sum(), 1.0)
        rate = min(max(rate, 0.5 / total), 1.0 - 0.5 / total)
        return float(special.ndtri(invert_pool_probability(rate, m)))


def log_posterior(mu, theta, z, data, priors, jitter=None) -> float:
    """Unnormalized log posterior of ``(mu, theta, z)``; ``-inf`` outside the support."""
    priors = priors if isinstance(priors, gp.Priors) else priors.resolve(data.grid)
    z = np.asarray(z, dtype=float)
    if z.size != len(data.grid):
        raise ValueError(f"z has {z.size} entries for {len(data.grid)} times")
    return PosteriorModel(data, priors, jitter).log_posterior(mu, theta.sigma, theta.ell, z)


# -- one chain -----------------------------------------------------------------

_dtrtrs = lapack.get_lapack_funcs("trtrs", dtype=np.float64)


def _trsv(low, b, trans=False):
    """Solve ``low @ x = b`` (or ``low.T @ x = b``) for lower-triangular ``low``."""
    x, info = _dtrtrs(low, b, lower=1, trans=1 if trans else 0)
    if info != 0:
        raise np.linalg.LinAlgError(f"triangular solve failed (info={info})")
    return x


_trsm = _trsv


class _AdaptiveRW:
    """Gaussian random-walk proposal whose scale and shape adapt during warmup."""

    def __init__(self, d, target):
        self.d = d
        self.target = target
        self.chol = np.eye(d) * 0.1
        self.log_scale = math.log(2.38 / math.sqrt(d))
        self._mean = np.zeros(d)
        self._m2 = np.zeros((d, d))
        self._t = 0
        self.tries = 0
        self.accepts = 0

    def step(self, rng):
        return math.exp(self.log_scale) * (self.chol @ rng.standard_normal(self.d))

    def record(self, x, accept_prob, accepted, adapt):
        if not adapt:
            self.tries += 1
            self.accepts += accepted
            return
        self._t += 1
        t = self._t
        self.log_scale += (accept_prob - self.target) / t**0.6
        delta = x - self._mean
        self._mean += delta / t
        self._m2 += np.outer(delta, x - self._mean)
        if t >= 200 and t % 50 == 0:
            cov = self._m2 / (t - 1) + 1e-8 * np.eye(self.d)
            try:
                self.chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                pass

    @property
    def rate(self):
        return self.accepts / self.tries if self.tries else float("nan")


class _Chain:
    def __init__(self, model: PosteriorModel, cfg: SamplerConfig, rng):
        self.model = model
        self.cfg = cfg
        self.rng = rng
        self.free = np.array([True, cfg.fixed_sigma is None, cfg.fixed_ell is None])
        d = int(self.free.sum())
        # non-centered move keeps z fixed; the surrogate-data move keeps the
        # surrogate observations and the whitened residual fixed
        self.nc = _AdaptiveRW(d, cfg.target_accept)
        self.cp = _AdaptiveRW(d, cfg.target_accept)
        self.ess_evals = 0
        self.ess_steps = 0
        self._sur_cache = None

    def _hyper(self, eta):
        mu, ls, le = eta
        sigma = self.cfg.fixed_sigma if self.cfg.fixed_sigma is not None else math.exp(ls)
        ell = self.cfg.fixed_ell if self.cfg.fixed_ell is not None else math.exp(le)
        return mu, sigma, ell

    def _hyper_logdens(self, eta, sigma, ell):
        lp = gp.log_prior(eta[0], (sigma, ell), self.model.priors)
        # Jacobian of the log transform for the sampled scales
        if self.free[1]:
            lp += eta[1]
        if self.free[2]:
            lp += eta[2]
        return lp

    def _chol(self, sigma, ell):
        try:
            return self.model.chol(sigma, ell)
        except gp.GPError:
            return None

    def initialize(self):
        model, cfg, rng = self.model, self.cfg, self.rng
        pri = model.priors
        sig0 = cfg.fixed_sigma if cfg.fixed_sigma is not None else pri.sigma_median()
        ell0 = cfg.fixed_ell if cfg.fixed_ell is not None else pri.ell.median()
        base = np.array([model.initial_mu(), math.log(sig0), math.log(ell0)])
        self.z = np.zeros(model.n)
        ll = float("nan")
        for _ in range(20):
            eta = base + cfg.init_spread * rng.standard_normal(3) * self.free
            mu, sigma, ell = self._hyper(eta)
            chol = self._chol(sigma, ell)
            if chol is None:
                continue
            w = chol @ self.z
            ll = model.loglik_latent(w + mu)
            lh = self._hyper_logdens(eta, sigma, ell)
            if math.isfinite(ll) and math.isfinite(lh):
                self.eta, self.chol, self.w, self.ll, self.lh = eta, chol, w, ll, lh
                self.s_diag = 1.0 / np.maximum(model.fisher_info(mu), 1e-6)
                return
        raise SamplerError(
            f"non-finite log posterior at initialization after 20 attempts "
            f"(mu={base[0]:.3g}, sigma={sig0:.3g}, ell={ell0:.3g}, last loglik={ll})"
        )

    def ess_step(self):
        """Elliptical slice update of z (and W) for fixed hyperparameters."""
        rng, model = self.rng, self.model
        mu = self.eta[0]
        nu = rng.standard_normal(model.n)
        w_nu = self.chol @ nu
        log_y = self.ll + math.log(rng.uniform())
        angle = rng.uniform(0.0, 2.0 * math.pi)
        lo, hi = angle - 2.0 * math.pi, angle
        self.ess_steps += 1
        while True:
            c, s = math.cos(angle), math.sin(angle)
            w_new = self.w * c + w_nu * s
            ll_new = model.loglik_latent(w_new + mu)
            self.ess_evals += 1
            if ll_new > log_y:
                self.z = self.z * c + nu * s
                self.w = w_new
                self.ll = ll_new
                return
            if angle < 0.0:
                lo = angle
            else:
                hi = angle
            if hi - lo < 1e-12:
                return
            angle = rng.uniform(lo, hi)

    def _propose(self, prop):
        eta_new = self.eta.copy()
        eta_new[self.free] += prop.step(self.rng)
        mu, sigma, ell = self._hyper(eta_new)
        return eta_new, mu, sigma, ell, self._hyper_logdens(eta_new, sigma, ell)

    def nc_step(self, adapt):
        """Metropolis on the hyperparameters holding the whitened z fixed."""
        eta_new, mu, sigma, ell, lh = self._propose(self.nc)
        log_u = math.log(self.rng.uniform())
        accept_prob, accepted = 0.0, False
        chol = self._chol(sigma, ell) if math.isfinite(lh) else None
        if chol is not None:
            w = chol @ self.z
            ll = self.model.loglik_latent(w + mu)
            log_ratio = (lh + ll) - (self.lh + self.ll)
            if math.isfinite(log_ratio):
                accept_prob = math.exp(min(0.0, log_ratio))
                if log_u < log_ratio:
                    accepted = True
                    self.eta, self.chol, self.w, self.ll, self.lh = eta_new, chol, w, ll, lh
        self.nc.record(self.eta[self.free], accept_prob, accepted, adapt)

    def mu_step(self):
        """Exact draw of mu from its conditional given f = W + mu and theta."""
        mu, sigma, ell = self._hyper(self.eta)
        ones = np.ones(self.model.n)
        u = _trsv(self.chol, ones)
        v = self.z + mu * u
        prec = 1.0 / self.model.priors.mu_sd ** 2 + float(u @ u)
        mu_new = float(u @ v) / prec + self.rng.standard_normal() / math.sqrt(prec)
        self.z = v - mu_new * u
        # f = W + mu is unchanged up to rounding; recompute so W == chol @ z
        self.w = self.chol @ self.z
        self.ll = self.model.loglik_latent(self.w + mu_new)
        self.eta = self.eta.copy()
        self.eta[0] = mu_new
        self.lh = self._hyper_logdens(self.eta, sigma, ell)

    def _surrogate_parts(self, sigma, ell):
        """Factors for the surrogate-data reparameterization at (sigma, ell).

        With surrogate observations g ~ N(W, S), W given g is Gaussian with
        covariance R = S - S (C + S)^-1 S and mean g - S (C + S)^-1 g.
        Returns chol(C + S), chol(R) and chol(C), or None if any fails.
        """
        key = (sigma, ell)
        if self._sur_cache is not None and self._sur_cache[0] == key:
            return self._sur_cache[1]
        model = self.model
        c = gp.cov_matrix_sym(model.times, gp.GpHyperparams(sigma, ell))
        s = self.s_diag
        idx = np.arange(model.n)
        try:
            lc, _ = gp.cholesky_jittered(c, model.jitter, scale=sigma * sigma)
            a = c.copy()
            a[idx, idx] += s
            la = np.linalg.cholesky(a)
            d = _trsm(la, np.diag(s))
            r = -(d.T @ d)
            r[idx, idx] += s
            lr, _ = gp.cholesky_jittered(r)
        except (gp.GPError, np.linalg.LinAlgError):
            return None
        return la, lr, lc

    def pnc_step(self, adapt):
        """Metropolis on the hyperparameters holding surrogate data g and the
        whitened residual of W about its surrogate posterior mean fixed."""
        rng, model = self.rng, self.model
        mu, sigma, ell = self._hyper(self.eta)
        cur = self._surrogate_parts(sigma, ell)
        if cur is None:
            return
        self._sur_cache = ((sigma, ell), cur)
        g = self.w + np.sqrt(self.s_diag) * rng.standard_normal(model.n)

        def pieces(parts):
            la = parts[0]
            alpha = _trsv(la, g)
            mean = g - self.s_diag * _trsv(la, alpha, trans=True)
            log_g = -0.5 * float(alpha @ alpha) - float(np.sum(np.log(np.diag(la))))
            return mean, log_g

        mean, log_g = pieces(cur)
        eta_res = _trsv(cur[1], self.w - mean)
        eta_new, mu_new, sigma_new, ell_new, lh = self._propose(self.cp)
        log_u = math.log(rng.uniform())
        accept_prob, accepted = 0.0, False
        new = self._surrogate_parts(sigma_new, ell_new) if math.isfinite(lh) else None
        if new is not None:
            mean_new, log_g_new = pieces(new)
            # round-trip through z so the stored W is exactly chol @ z
            z_new = _trsv(new[2], mean_new + new[1] @ eta_res)
            w = new[2] @ z_new
            ll = model.loglik_latent(w + mu_new)
            log_ratio = (lh + ll + log_g_new) - (self.lh + self.ll + log_g)
            if math.isfinite(log_ratio):
                accept_prob = math.exp(min(0.0, log_ratio))
                if log_u < log_ratio:
                    accepted = True
                    lc = new[2]
                    self.z = z_new
                    self.eta, self.chol, self.w, self.ll, self.lh = eta_new, lc, w, ll, lh
                    self._sur_cache = ((sigma_new, ell_new), new)
        self.cp.record(self.eta[self.free], accept_prob, accepted, adapt)

    def run(self):
        cfg = self.cfg
        self.initialize()
        n, nd = self.model.n, cfg.draws
        out = {
            "mu": np.empty(nd),
            "sigma": np.empty(nd),
            "ell": np.empty(nd),
            "z": np.empty((nd, n)),
            "W": np.empty((nd, n)),
        }
        for it in range(cfg.warmup + nd * cfg.thin):
            warm = it < cfg.warmup
            if cfg.sample_latent:
                for _ in range(cfg.ess_steps):
                    self.ess_step()
                self.mu_step()
            for _ in range(cfg.mh_steps):
                self.nc_step(adapt=warm)
                if cfg.sample_latent:
                    self.pnc_step(adapt=warm)
            if not warm and (it - cfg.warmup + 1) % cfg.thin == 0:
                i = (it - cfg.warmup) // cfg.thin
                mu, sigma, ell = self._hyper(self.eta)
                out["mu"][i], out["sigma"][i], out["ell"][i] = mu, sigma, ell
                out["z"][i] = self.z
                out["W"][i] = self.w
        out["accept_rate"] = self.nc.rate
        out["accept_rate_centered"] = self.cp.rate
        out["ess_evals_per_step"] = self.ess_evals / self.ess_steps if self.ess_steps else float("nan")
        return out


def _chain_task(args):
    model, cfg, seed_seq = args
    return _Chain(model, cfg, np.random.Generator(np.random.PCG64(seed_seq))).run()


# -- draws ----------------------------------------------------------------------


@dataclass
class PosteriorDraws:
    times: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    ell: np.ndarray
    W: np.ndarray
    z: Optional[np.ndarray] = None
    warmup: int = 0
    seed: Optional[int] = None
    accept_rate: Optional[np.ndarray] = None
    ess_evals: Optional[np.ndarray] = None
    jitter: Optional[float] = None
    meta: dict = field(default_factory=dict)

    @property
    def chains(self):
        return self.mu.shape[0]

    @property
    def n_draws(self):
        return self.mu.shape[1]

    def param(self, name):
        return getattr(self, name)

    def prevalence(self):
        return probit(self.W + self.mu[..., None])

    def flat(self, name):
        a = getattr(self, name)
        return a.reshape((-1,) + a.shape[2:])

    def rederive_W(self):
        """Recompute W from stored (z, sigma, ell)."""
        out = np.empty_like(self.W)
        for c in range(self.chains):
            for d in range(self.n_draws):
                th = gp.GpHyperparams(self.sigma[c, d], self.ell[c, d])
                out[c, d] = gp.build_covariance(self.times, th, self.jitter).chol @ self.z[c, d]
        return out

    def interval(self, name, level=0.95):
        x = self.flat(name)
        a = (1.0 - level) / 2.0
        return float(np.mean(x)), float(np.percentile(x, 100 * a)), float(np.percentile(x, 100 * (1 - a)))

    def to_csv(self, path):
        n = self.W.shape[2]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["chain", "draw", "mu", "sigma", "ell"] + [f"W_{i + 1}" for i in range(n)])
            for c in range(self.chains):
                for d in range(self.n_draws):
                    row = [c, d, repr(float(self.mu[c, d])), repr(float(self.sigma[c, d])), repr(float(self.ell[c, d]))]
                    row += [repr(float(v)) for v in self.W[c, d]]
                    wr.writerow(row)

    @classmethod
    def from_csv(cls, path, times, **kw):
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            rows = [r for r in rd]
        if header[:5] != ["chain", "draw", "mu", "sigma", "ell"]:
            raise ValueError(f"{path}: unexpected draws header {header[:5]}")
        n = len(header) - 5
        if n != len(times):
            raise ValueError(f"{path}: {n} latent columns for {len(times)} times")
        chains = sorted({int(r[0]) for r in rows})
        nd = len(rows) // len(chains)
        arr = np.array([[float(v) for v in r[2:]] for r in rows]).reshape(len(chains), nd, n + 3)
        return cls(np.asarray(times, float), arr[..., 0], arr[..., 1], arr[..., 2], arr[..., 3:], **kw)


def run_mcmc(data, config: SamplerConfig, priors=None) -> PosteriorDraws:
    """Sample the posterior; results depend only on (data, config, priors)."""
    report = validate_dataset(data)
    report.raise_if_invalid()
    if priors is None:
        priors = gp.PriorConfig()
    if isinstance(priors, gp.PriorConfig):
        priors = priors.resolve(data.grid)
    model = PosteriorModel(data, priors, config.jitter)
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    tasks = [(model, config, s) for s in seeds]
    if config.threads > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(config.threads, config.chains)) as ex:
            results = list(ex.map(_chain_task, tasks))
    else:
        results = [_chain_task(t) for t in tasks]
    stack = lambda k: np.stack([r[k] for r in results])
    return PosteriorDraws(
        times=np.array(data.grid.times),
        mu=stack("mu"),
        sigma=stack("sigma"),
        ell=stack("ell"),
        W=stack("W"),
        z=stack("z"),
        warmup=config.warmup,
        seed=config.seed,
        accept_rate=np.array([r["accept_rate"] for r in results]),
        ess_evals=np.array([r["ess_evals_per_step"] for r in results]),
        jitter=config.jitter,
        meta={"config": asdict(config), "data_kind": data.kind},
    )
