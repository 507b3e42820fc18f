"""Prediction-rejection curves, PRR, bootstrap intervals and run-vs-run PRR diffs.

Curves are evaluated exactly at every 1/N rejection step. At rejection
fraction i/N the ``N - i`` best-ranked items are retained; at fraction 1 the
curve holds the value of the last retained item. Areas use the trapezoidal
rule, and the random baseline is the analytic global mean, so

    PRR = (A_uncertainty - A_random) / (A_oracle - A_random)

which is 1 for an oracle-equal ranking, 0 for random and negative when
uncertainty prefers the worse outputs.
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from .core import EvalRecord, PRRResult
from .errors import AllTrialsDegenerateError, DegenerateQualityError, UndefinedPRRError

ORDERINGS = ("uncertainty", "oracle", "random")


@dataclass(frozen=True)
class RejectionCurve:
    fractions: tuple[float, ...]
    values: tuple[float, ...]
    ordering: str

    def to_dict(self):
        return {"fractions": list(self.fractions), "values": list(self.values), "ordering": self.ordering}


def _pick_metric(records: Sequence[EvalRecord], metric: Optional[str]) -> str:
    if metric is not None:
        return metric
    names = set()
    for r in records:
        names.update(r.quality_raw or r.quality_norm)
    if len(names) != 1:
        raise ValueError(f"records carry metrics {sorted(names)}; pass metric=")
    return names.pop()


def _arrays(records: Sequence[EvalRecord], metric: Optional[str]):
    if len(records) < 2:
        raise ValueError("need at least 2 records")
    metric = _pick_metric(records, metric)
    q = np.array(
        [r.quality_raw[metric] if metric in r.quality_raw else r.quality_norm[metric] for r in records],
        dtype=np.float64,
    )
    u = np.array([r.uncertainty for r in records], dtype=np.float64)
    _, id_rank = np.unique([r.item_id for r in records], return_inverse=True)
    return u, q, id_rank


def _normalize(q: np.ndarray) -> np.ndarray:
    lo, hi = q.min(), q.max()
    if hi == lo:
        raise DegenerateQualityError(f"quality is constant ({lo}) over {q.size} items")
    return (q - lo) / (hi - lo)


def _keep_order(u, q, id_rank, ordering: str) -> np.ndarray:
    """Item indices from first-kept to first-rejected."""
    if ordering == "uncertainty":
        return np.lexsort((id_rank, u))
    if ordering == "oracle":
        return np.lexsort((id_rank, -q))
    raise ValueError(f"unknown ordering {ordering!r}")


def _curve(qn_sorted: np.ndarray) -> np.ndarray:
    n = qn_sorted.size
    retained = np.arange(n, 0, -1)
    vals = np.cumsum(qn_sorted)[retained - 1] / retained
    return np.append(vals, vals[-1])


def _area(values: np.ndarray) -> float:
    n = values.size - 1
    return float(np.sum((values[:-1] + values[1:]) * 0.5) / n)


def build_curve(records: Sequence[EvalRecord], ordering: str, metric: Optional[str] = None) -> RejectionCurve:
    u, q, id_rank = _arrays(records, metric)
    qn = _normalize(q)
    n = qn.size
    fractions = tuple(i / n for i in range(n + 1))
    if ordering == "random":
        values = np.full(n + 1, qn.mean())
    else:
        values = _curve(qn[_keep_order(u, qn, id_rank, ordering)])
    return RejectionCurve(fractions, tuple(float(v) for v in values), ordering)


def _prr_core(u, q, id_rank) -> tuple[float, float, float, float]:
    qn = _normalize(q)
    a_uns = _area(_curve(qn[_keep_order(u, qn, id_rank, "uncertainty")]))
    a_orc = _area(_curve(qn[_keep_order(u, qn, id_rank, "oracle")]))
    a_rand = float(qn.mean())
    if a_orc == a_rand:
        raise UndefinedPRRError("oracle and random rejection areas coincide")
    return (a_uns - a_rand) / (a_orc - a_rand), a_uns, a_orc, a_rand


@dataclass(frozen=True)
class BootstrapStats:
    mean: float
    sd: float
    n_trials: int
    n_discarded: int

    def __iter__(self):
        return iter((self.mean, self.sd))


def _bootstrap_arrays(u, q, id_rank, n_trials: int, seed: int, workers: int = 1) -> BootstrapStats:
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    n = u.size
    idx = np.random.default_rng(seed).integers(0, n, size=(n_trials, n))

    def trial(rows):
        try:
            return _prr_core(u[rows], q[rows], id_rank[rows])[0]
        except DegenerateQualityError:
            return None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(trial, idx))
    else:
        results = [trial(rows) for rows in idx]
    kept = np.array([r for r in results if r is not None], dtype=np.float64)
    discarded = n_trials - kept.size
    if kept.size == 0:
        raise AllTrialsDegenerateError(f"all {n_trials} bootstrap trials had constant quality")
    return BootstrapStats(float(kept.mean()), float(kept.std()), n_trials, discarded)


def bootstrap(
    records: Sequence[EvalRecord],
    n_trials: int = 1000,
    seed: int = 0,
    metric: Optional[str] = None,
    workers: int = 1,
) -> BootstrapStats:
    """Resample records with replacement and recompute PRR per trial.

    Trials whose resample has constant quality are discarded and counted.
    Quality is re-normalized inside every resample.
    """
    u, q, id_rank = _arrays(records, metric)
    return _bootstrap_arrays(u, q, id_rank, n_trials, seed, workers)


def prr(
    records: Sequence[EvalRecord],
    metric: Optional[str] = None,
    n_boot: int = 0,
    seed: int = 0,
    workers: int = 1,
) -> PRRResult:
    u, q, id_rank = _arrays(records, metric)
    value, a_uns, a_orc, a_rand = _prr_core(u, q, id_rank)
    boot_mean = boot_sd = None
    if n_boot:
        stats = _bootstrap_arrays(u, q, id_rank, n_boot, seed, workers)
        boot_mean, boot_sd = stats.mean, stats.sd
    return PRRResult(value, a_uns, a_orc, a_rand, len(records), boot_mean, boot_sd, n_boot)


# --- run-vs-run diffs -------------------------------------------------------

DIFF_KEY = ("task", "quality_metric", "ue_method", "strategy")


@dataclass(frozen=True)
class PRRDiff:
    entries: tuple[Mapping[str, Any], ...]
    mismatches: tuple[Mapping[str, Any], ...] = field(default_factory=tuple)

    def to_dict(self):
        return {"entries": [dict(e) for e in self.entries], "mismatches": [dict(m) for m in self.mismatches]}

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = [*DIFF_KEY, "prr_before", "prr_after", "delta"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for e in self.entries:
            w.writerow({c: e[c] for c in cols})
        return buf.getvalue()


def _rows(report) -> list[Mapping[str, Any]]:
    if isinstance(report, Mapping):
        return list(report.get("best") or report.get("rows") or [])
    return list(report)


def prr_diff(run_a, run_b) -> PRRDiff:
    """Per-key PRR deltas (``after - before``) between two reports.

    Reports are row lists or report mappings (their ``best`` rows are used).
    Keys present in only one run are listed as mismatches.
    """
    a = {tuple(r[k] for k in DIFF_KEY): r for r in _rows(run_a)}
    b = {tuple(r[k] for k in DIFF_KEY): r for r in _rows(run_b)}
    entries = []
    for key in sorted(a.keys() & b.keys()):
        before, after = float(a[key]["prr"]), float(b[key]["prr"])
        entries.append({**dict(zip(DIFF_KEY, key)), "prr_before": before, "prr_after": after, "delta": after - before})
    mismatches = [
        {**dict(zip(DIFF_KEY, key)), "only_in": "run_a" if key in a else "run_b"}
        for key in sorted(a.keys() ^ b.keys())
    ]
    return PRRDiff(tuple(entries), tuple(mismatches))
