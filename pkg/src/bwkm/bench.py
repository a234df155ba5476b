"""Experiment runner: every method on every (dataset, K, repetition) with a shared ledger protocol."""

from __future__ import annotations

import itertools
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .algorithm import BwkmConfig, StopRule, bwkm
from .baselines import grid_rpkm, kmpp_init, lloyd_full, minibatch
from .lloyd import DistanceLedger, LloydStop
from .records import TrialRecord, write_records
from .seeding import make_rng

log = logging.getLogger(__name__)

METHODS = ("bwkm", "lloyd-forgy", "lloyd-kmpp", "lloyd-kmc2", "minibatch", "grid-rpkm",
           "kmpp-init")
BUDGET_POLICIES = ("min-of-baselines", "fixed")
# methods that never bound the BWKM budget
_NON_BUDGET = ("bwkm", "kmpp-init")


def relative_error(errors: dict) -> dict:
    """``(E - min E) / min E`` per method."""
    vals = dict(errors)
    for k, v in vals.items():
        if not (v > 0 and math.isfinite(v)):
            raise ValueError(f"relative error needs positive finite errors; {k} has {v!r}")
    best = min(vals.values())
    return {k: (v - best) / best for k, v in vals.items()}


def synthesize_mixture(n: int, d: int, k_true: int, separation: float, rng):
    """Balanced mixture of unit-variance Gaussians.

    Component means sit on a randomly rotated and shifted integer lattice
    scaled by ``separation``, so every pair is at least ``separation`` apart.
    Returns ``(X, labels, means)``.
    """
    if n < k_true or k_true < 1:
        raise ValueError(f"need n >= k_true >= 1, got n={n}, k_true={k_true}")
    side = 1
    while side**d < k_true:
        side += 1
    lattice = np.array(list(itertools.islice(itertools.product(range(side), repeat=d), k_true)),
                       dtype=float)
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    Q = Q * np.sign(np.diag(R))
    means = separation * lattice @ Q + rng.normal(scale=max(separation, 1.0), size=d)
    sizes = np.full(k_true, n // k_true)
    sizes[: n % k_true] += 1
    labels = np.repeat(np.arange(k_true), sizes)
    X = means[labels] + rng.standard_normal((n, d))
    perm = rng.permutation(n)
    return X[perm], labels[perm], means


@dataclass
class MethodParams:
    m: int | None = None
    m_prime: int | None = None
    s: int | None = None
    r: int = 5
    stop: tuple = ()
    b: int = 100
    mb_iterations: int | None = 100
    chain: int = 200
    eps: float | None = None
    grid_iters: int = 6
    lloyd_max_iter: int = 300

    def bwkm_config(self, K: int, seed: int, test_mode: bool, budget=None) -> BwkmConfig:
        stop = StopRule.parse(self.stop) if self.stop else StopRule()
        if budget is not None:
            stop.budget = float(budget) if stop.budget is None or math.isinf(stop.budget) \
                else min(stop.budget, float(budget))
        return BwkmConfig(K=K, m=self.m, m_prime=self.m_prime, s=self.s, r=self.r, stop=stop,
                          seed=seed, test_mode=test_mode)


def method_stream(method: str, dataset: str, K: int) -> tuple:
    return (zlib.crc32(method.encode()), zlib.crc32(dataset.encode()), K)


def run_method(method: str, X, K: int, seed: int, params: MethodParams | None = None, *,
               dataset: str = "data", budget=None, test_mode: bool = False,
               ledger: DistanceLedger | None = None):
    """Dispatch one method; returns ``(centers, record)``."""
    params = params or MethodParams()
    rng = make_rng(seed, method_stream(method, dataset, K))
    base = method.split("-")[0] if method.startswith("minibatch") else method
    if base == "bwkm":
        cfg = params.bwkm_config(K, seed, test_mode, budget)
        return bwkm(X, cfg, ledger, rng=rng, dataset=dataset)
    if method.startswith("lloyd-"):
        return lloyd_full(X, K, method[len("lloyd-"):], params.eps, rng, ledger, seed=seed,
                          max_iter=params.lloyd_max_iter, chain_length=params.chain,
                          test_mode=test_mode, dataset=dataset)
    if base == "minibatch":
        b = int(method.split("-")[1]) if "-" in method else params.b
        return minibatch(X, K, b, params.mb_iterations, rng, ledger, seed=seed, budget=budget,
                         test_mode=test_mode, dataset=dataset)
    if method == "grid-rpkm":
        return grid_rpkm(X, K, params.grid_iters, rng, ledger, seed=seed,
                         lloyd=LloydStop(tol=params.eps), test_mode=test_mode, dataset=dataset)
    if method == "kmpp-init":
        return kmpp_init(X, K, rng, ledger, seed=seed, dataset=dataset)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


@dataclass
class ExperimentConfig:
    ks: tuple = (3, 9, 27)
    repetitions: int = 40
    methods: tuple = ("lloyd-forgy", "lloyd-kmpp", "lloyd-kmc2", "minibatch-100",
                      "minibatch-500", "minibatch-1000", "kmpp-init", "bwkm")
    params: MethodParams = field(default_factory=MethodParams)
    budget_policy: str = "min-of-baselines"
    budget: float | None = None
    seed: int = 0
    output: str | None = None
    test_mode: bool = False
    jobs: int = 1
    timing: bool = False

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.budget_policy not in BUDGET_POLICIES:
            raise ValueError(f"budget policy must be one of {BUDGET_POLICIES}")
        if self.budget_policy == "fixed" and not (self.budget and self.budget > 0):
            raise ValueError("fixed budget policy needs a positive budget")
        for m in self.methods:
            if m.split("-")[0] != "minibatch" and m not in METHODS:
                raise ValueError(f"unknown method {m!r}")
        if not self.ks or any(k < 1 for k in self.ks):
            raise ValueError("K list must hold positive integers")


def _run_group(args):
    config, name, X, K, rep = args
    seed = config.seed + rep
    records = []
    for method in config.methods:
        if method == "bwkm":
            continue
        _, rec = run_method(method, X, K, seed, config.params, dataset=name,
                            test_mode=config.test_mode)
        records.append(rec)
    if "bwkm" in config.methods:
        if config.budget_policy == "fixed":
            budget = config.budget
        else:
            ledgers = [r.distances for r in records if r.method not in _NON_BUDGET]
            budget = min(ledgers) if ledgers else None
        _, rec = run_method("bwkm", X, K, seed, config.params, dataset=name, budget=budget,
                            test_mode=config.test_mode)
        records.append(rec)
    return records


def run_experiment(config: ExperimentConfig, datasets: dict) -> list[TrialRecord]:
    """Run every configured method for each (dataset, K, repetition).

    Baselines run to their own stopping rules first; under the
    ``min-of-baselines`` policy BWKM then receives the smallest baseline
    ledger of the same repetition as its distance budget.  Records come back
    sorted by (dataset, K, seed, method) and are written to
    ``config.output`` (``.jsonl`` and ``.csv``) when set.
    """
    tasks = [(config, name, np.asarray(X, dtype=float), K, rep)
             for name, X in datasets.items() for K in config.ks
             for rep in range(config.repetitions)]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            groups = list(pool.map(_run_group, tasks))
    else:
        groups = [_run_group(t) for t in tasks]
    records = sorted((r for g in groups for r in g), key=lambda r: r.key)
    for r in records:
        r.validate()
    if config.output:
        try:
            write_records(records, config.output, include_timing=config.timing)
        except OSError as exc:
            raise OSError(f"cannot write results to {config.output}: {exc}") from exc
    return records


@dataclass
class SummaryRow:
    dataset: str
    k: int
    method: str
    runs: int
    mean_error: float
    mean_rel_error: float
    ci95_rel_error: float
    rel_error_of_mean: float
    mean_distances: float


def summarize(records) -> list[SummaryRow]:
    """Per (dataset, K, method): average relative error over repetitions and
    mean distances.  ``rel_error_of_mean`` applies the same formula to the
    mean errors, so the best method of each group reads exactly 0."""
    by_rep: dict = {}
    for r in records:
        by_rep.setdefault((r.dataset, r.k, r.seed), {})[r.method] = r
    rel: dict = {}
    for (ds, k, _), group in by_rep.items():
        errs = {m: rec.final_error for m, rec in group.items()}
        try:
            rr = relative_error(errs)
        except ValueError:
            rr = {m: math.nan for m in errs}
        for m, v in rr.items():
            rel.setdefault((ds, k, m), []).append(v)
    agg: dict = {}
    for r in records:
        agg.setdefault((r.dataset, r.k, r.method), []).append(r)
    mean_err = {key: float(np.mean([r.final_error for r in recs])) for key, recs in agg.items()}
    rows = []
    for (ds, k) in sorted({(a, b) for a, b, _ in agg}):
        group = {m: mean_err[(a, b, m)] for (a, b, m) in agg if (a, b) == (ds, k)}
        try:
            rom = relative_error(group)
        except ValueError:
            rom = {m: math.nan for m in group}
        for m in sorted(group):
            vals = np.asarray(rel[(ds, k, m)], dtype=float)
            recs = agg[(ds, k, m)]
            ci = 1.96 * vals.std(ddof=1) / math.sqrt(len(vals)) if len(vals) > 1 else 0.0
            rows.append(SummaryRow(ds, k, m, len(recs), group[m], float(vals.mean()), float(ci),
                                   rom[m], float(np.mean([r.distances for r in recs]))))
    return rows


def format_summary(rows) -> str:
    head = f"{'dataset':<16} {'K':>3} {'method':<16} {'runs':>4} {'mean_E':>14} " \
           f"{'rel_E':>9} {'ci95':>9} {'relE_mean':>9} {'distances':>14}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r.dataset:<16} {r.k:>3} {r.method:<16} {r.runs:>4} {r.mean_error:>14.6g} "
                     f"{r.mean_rel_error:>9.4f} {r.ci95_rel_error:>9.4f} "
                     f"{r.rel_error_of_mean:>9.4f} {r.mean_distances:>14.0f}")
    return "\n".join(lines)
