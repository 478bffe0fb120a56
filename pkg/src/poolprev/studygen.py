"""Synthetic studies, record aggregation, hypothetical pooling and subsampling."""

from __future__ import annotations

import datetime as _dt
from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import gp
from .domain import (
    EfficientLayout,
    GeneralLayout,
    IndividualRecord,
    IndividualResults,
    PooledObservations,
    TimeGrid,
)
from .inference import probit


def derive_seed(seed, *path):
    """Independent, reproducible child seed for a (seed, index, ...) path."""
    return int(np.random.SeedSequence([int(seed), *map(int, path)]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class StudyConfig:
    grid: TimeGrid
    true_theta: gp.GpHyperparams
    true_mu: float
    n_per_time: int
    m: int
    name: str = "custom"

    def to_dict(self):
        return {
            "name": self.name,
            "times": [float(t) for t in self.grid.times],
            "interval_span": self.grid.interval_span,
            "ell": self.true_theta.ell,
            "sigma": self.true_theta.sigma,
            "mu": self.true_mu,
            "n_per_time": self.n_per_time,
            "m": self.m,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            TimeGrid(d["times"], d["interval_span"]),
            gp.GpHyperparams(float(d["sigma"]), float(d["ell"])),
            float(d["mu"]),
            int(d["n_per_time"]),
            int(d["m"]),
            d.get("name", "custom"),
        )


def _even_grid(count, span):
    return TimeGrid(np.arange(count) * (span / count), span)


def preset(name, n_per_time=None, m=None) -> StudyConfig:
    """Study configurations: ``study1`` (25 times over 1000 days) and ``study2`` (150 daily times)."""
    if name == "study1":
        cfg = StudyConfig(_even_grid(25, 1000.0), gp.GpHyperparams(0.5, 100.0), -2.0, 45, 3, "study1")
    elif name == "study2":
        cfg = StudyConfig(_even_grid(150, 150.0), gp.GpHyperparams(0.25, 25.0), -2.33, 500, 10, "study2")
    else:
        raise ValueError(f"unknown preset {name!r}; expected study1 or study2")
    if n_per_time is not None or m is not None:
        cfg = StudyConfig(
            cfg.grid, cfg.true_theta, cfg.true_mu, n_per_time or cfg.n_per_time, m or cfg.m, cfg.name
        )
    return cfg


@dataclass(frozen=True)
class SyntheticTruth:
    grid: TimeGrid
    true_theta: gp.GpHyperparams
    true_mu: float
    true_W: np.ndarray
    true_p: np.ndarray


@dataclass(frozen=True)
class PoolingPlan:
    m_star: int
    seed: int
    assignment: tuple  # per time: tuple of index arrays, one per pool

    def to_json(self):
        return {
            "m_star": self.m_star,
            "seed": self.seed,
            "assignment": [[[int(i) for i in pool] for pool in pools] for pools in self.assignment],
        }


def make_pools(individuals: IndividualResults, m_star: int, seed, layout="efficient"):
    """Shuffle each time's individuals and cut them into pools of ``m_star``.

    The remainder pool (``n % m_star`` individuals) is placed last. A pool is
    positive when any member is positive.
    """
    if m_star < 2:
        raise ValueError("m_star must be at least 2")
    rng = np.random.default_rng(seed)
    assignment = []
    ti, sizes, res = [], [], []
    k, y1, m_rem, y2 = [], [], [], []
    for i, r in enumerate(individuals.results):
        n = r.size
        perm = rng.permutation(n)
        pools = tuple(perm[s : s + m_star] for s in range(0, n, m_star))
        assignment.append(pools)
        results = [int(r[p].max()) for p in pools]
        ti += [i] * len(pools)
        sizes += [p.size for p in pools]
        res += results
        full = n // m_star
        k.append(full + 1)
        y1.append(sum(results[:full]))
        m_rem.append(n % m_star)
        y2.append(results[full] if n % m_star else 0)
    plan = PoolingPlan(int(m_star), int(seed), tuple(assignment))
    if layout == "general":
        lay = GeneralLayout(ti, sizes, res)
    elif layout == "efficient":
        lay = EfficientLayout(k, m_star, y1, m_rem, y2)
    else:
        raise ValueError(f"unsupported pooled layout {layout!r}")
    n_per_time = [r.size for r in individuals.results]
    return plan, PooledObservations(individuals.grid, lay, n_per_time)


def pool_budget(individuals: IndividualResults, m_stars) -> np.ndarray:
    """Tests used per time by the largest pooling budget among ``m_stars``."""
    n = np.array([r.size for r in individuals.results])
    m_stars = np.atleast_1d(m_stars)
    return np.max([-(-n // m) for m in m_stars], axis=0)


def subsample_budget(individuals: IndividualResults, budget, seed) -> IndividualResults:
    """Uniform subsample without replacement of ``budget[i]`` individuals at time ``i``."""
    n = np.array([r.size for r in individuals.results])
    budget = np.broadcast_to(np.asarray(budget, dtype=np.int64), n.shape)
    over = np.flatnonzero(budget > n)
    if over.size:
        i = int(over[0])
        raise ValueError(f"budget {budget[i]} exceeds the {n[i]} individuals at time {i}")
    rng = np.random.default_rng(seed)
    out = []
    for r, b in zip(individuals.results, budget):
        idx = np.sort(rng.choice(r.size, size=int(b), replace=False))
        out.append(r[idx])
    return IndividualResults(individuals.grid, out)


def simulate_individuals(grid, p, n_per_time, rng) -> IndividualResults:
    n = np.broadcast_to(np.asarray(n_per_time, dtype=np.int64), p.shape)
    return IndividualResults(grid, [(rng.random(int(k)) < pi).astype(np.int64) for k, pi in zip(n, p)])


def generate_synthetic(study: StudyConfig, seed):
    """Draw a truth curve, simulate individuals and pool them.

    Returns ``(truth, individuals, pooled, plan)``; ``individuals`` keeps the
    per-individual results so budget-matched subsamples can be drawn from it.
    """
    rng = np.random.default_rng(derive_seed(seed, 0))
    w = gp.sample_prior(study.grid, study.true_theta, rng)
    p = probit(w + study.true_mu)
    truth = SyntheticTruth(study.grid, study.true_theta, study.true_mu, w, p)
    individuals = simulate_individuals(study.grid, p, study.n_per_time, rng)
    plan, pooled = make_pools(individuals, study.m, derive_seed(seed, 1))
    return truth, individuals, pooled, plan


def matched_subsample(individuals, m_stars, seed):
    return subsample_budget(individuals, pool_budget(individuals, m_stars), seed)


def aggregate_by_window(records: Sequence[IndividualRecord], window_days: int = 10, interval_span=None):
    """Group records per site into sampling efforts and build a global time series.

    Within a site, a record joins the current group when its date is less
    than ``window_days`` after the group's first date; otherwise it opens a
    new group. Groups are dated by their first record. Repeat records of one
    individual inside a group count once, positive if any is positive. Groups
    from different sites that share a date become one time point.

    Returns ``(IndividualResults, origin_date)``; times are days after the
    earliest record.
    """
    if window_days < 1:
        raise ValueError("window_days must be at least 1")
    if not records:
        return IndividualResults(TimeGrid([], 0.0), []), None
    by_site = defaultdict(list)
    for rec in records:
        by_site[rec.site].append(rec)
    by_date = defaultdict(list)
    for site in sorted(by_site):
        recs = sorted(by_site[site], key=lambda r: r.date)
        groups = []
        for rec in recs:
            if groups and (rec.date - groups[-1][0]).days < window_days:
                groups[-1][1].append(rec)
            else:
                groups.append((rec.date, [rec]))
        for first, members in groups:
            by_date[first].append(_dedupe(site, members))
    origin = min(by_date)
    dates = sorted(by_date)
    times = [(d - origin).days for d in dates]
    results = [np.concatenate(by_date[d]) for d in dates]
    span = times[-1] if interval_span is None else interval_span
    return IndividualResults(TimeGrid(times, span), results), origin


def _dedupe(site, members):
    seen = {}
    anon = []
    for rec in members:
        if rec.individual is None:
            anon.append(rec.result)
        else:
            seen[rec.individual] = max(seen.get(rec.individual, 0), rec.result)
    return np.array(anon + [seen[k] for k in sorted(seen)], dtype=np.int64)


def records_from_results(individuals: IndividualResults, origin: _dt.date, site="site1"):
    """Individual records for day-offset times; fractional days are truncated."""
    out = []
    for t, r in zip(individuals.grid.times, individuals.results):
        date = origin + _dt.timedelta(days=int(t))
        out += [IndividualRecord(site, date, int(v)) for v in r]
    return out


def resample_study(individuals: IndividualResults, m_star, replicates, seed):
    """Independent pooled datasets and budget-matched subsamples, one pair per replicate."""
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    out = []
    for r in range(replicates):
        _, pooled = make_pools(individuals, m_star, derive_seed(seed, r, 0))
        sub = matched_subsample(individuals, [m_star], derive_seed(seed, r, 1))
        out.append((pooled, sub))
    return out
