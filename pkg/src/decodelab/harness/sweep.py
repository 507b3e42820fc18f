"""Sweep orchestration: decode -> uncertainty -> quality -> PRR, with a resumable journal.

Every (task, item, strategy-with-params) work unit becomes one JSONL line in
``journal.jsonl``. Units found in the journal are never re-decoded. Reports
are rebuilt from journal entries only, in a sorted order, so their bytes do
not depend on worker count or on how often the run was resumed.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from ..core import EvalRecord, strategy_id
from ..decoding import DecodeConfig, decode
from ..errors import DecodeLabError, MissingItemsError, ProtocolError, ScorerError
from ..eval import build_curve, prr
from ..quality import NATIVE_METRICS, ExternalScorer, ScoredPair, distinct_n
from ..uncertainty import score as ue_score
from .config import Resources, RunConfig, load_resources
from .data import DatasetItem
from .prompts import render_prompt

log = logging.getLogger(__name__)

JOURNAL = "journal.jsonl"
REPORT_SCALE = 100.0
REPORT_COLUMNS = ("task", "quality_metric", "ue_method", "strategy", "hyperparams", "prr", "boot_sd", "n", "prr_raw")


def unit_key(task: str, item_id: str, sid: str) -> str:
    return f"{task}|{item_id}|{sid}"


# --- journal -----------------------------------------------------------------


def read_journal(path) -> dict[str, dict]:
    """Last entry per key wins; a torn final line (crash mid-write) is skipped."""
    entries: dict[str, dict] = {}
    path = Path(path)
    if not path.exists():
        return entries
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                e = json.loads(line)
            except json.JSONDecodeError:
                log.warning("skipping unreadable journal line in %s", path)
                continue
            entries[e["key"]] = e
    return entries


def _append(path: Path, entries: Iterable[dict]) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e, sort_keys=True, ensure_ascii=False) + "\n")
        fh.flush()


# --- work units ----------------------------------------------------------------


@dataclass(frozen=True)
class Unit:
    task: str
    item: DatasetItem
    cfg: DecodeConfig

    @property
    def sid(self) -> str:
        return strategy_id(self.cfg.strategy, self.cfg.params)

    @property
    def key(self) -> str:
        return unit_key(self.task, self.item.id, self.sid)


def plan_units(cfg: RunConfig, res: Resources) -> list[list[Unit]]:
    """Groups of units sharing (task, strategy config), each in item order."""
    layer_count = res.model.capabilities.layer_count
    groups = []
    for task in sorted(res.items):
        for name in cfg.strategies:
            for params in cfg.grid(name, layer_count):
                dcfg = cfg.decode_config(name, params, task)
                groups.append([Unit(task, item, dcfg) for item in res.items[task]])
    return groups


def _fingerprint(cfg: RunConfig, unit: Unit) -> dict:
    return {
        "max_new_tokens": unit.cfg.max_new_tokens,
        "scoring_policy": unit.cfg.scoring_policy.value,
        "metrics": sorted(cfg.metrics.get(unit.task, [])),
    }


def _decode_unit(res: Resources, cfg: RunConfig, unit: Unit) -> dict:
    base = {"key": unit.key, "task": unit.task, "item_id": unit.item.id, "strategy": unit.cfg.strategy,
            "strategy_id": unit.sid, "params": json.loads(json.dumps(dict(unit.cfg.params))),
            "split": unit.item.split, "fingerprint": _fingerprint(cfg, unit)}
    try:
        prompt = res.tokenizer.encode(render_prompt(unit.item, unit.task, cfg.templates))
        rec = decode(res.model, prompt, unit.cfg, unit.item.id, amateur=res.amateur)
        rec = replace(rec, text=res.tokenizer.decode(rec.output.generated))
        ue = {m: ue_score(rec, m) for m in cfg.ue_methods}
        gen = [t for t in rec.output.generated if t != res.tokenizer.vocab.eos_id]
        return {**base, "status": "ok", "record": rec.to_dict(), "uncertainty": ue,
                "distinct": {"1": distinct_n(gen, 1), "2": distinct_n(gen, 2)}, "quality": {}}
    except (DecodeLabError, ValueError) as exc:
        return {**base, "status": "quarantined", "reason": f"{type(exc).__name__}: {exc}"}


def _native_quality(metric: str, text: str, refs: Sequence[str], multi_reference: bool) -> float:
    fn = NATIVE_METRICS[metric]
    return fn(text, list(refs) if multi_reference else refs[0])


def _score_external(scorer: ExternalScorer, metric: str, entries: list[dict], items: Mapping[str, DatasetItem]) -> None:
    pending = [e for e in entries if e["status"] == "ok"]
    for _ in range(2):
        if not pending:
            return
        pairs = [
            ScoredPair(e["item_id"], e["record"]["text"], (items[e["item_id"]].references or ("",))[0],
                       metric, aux=items[e["item_id"]].aux)
            for e in pending
        ]
        try:
            scored = scorer.score(pairs)
        except MissingItemsError as exc:
            missing = set(exc.missing)
            for e in pending:
                if e["item_id"] in missing:
                    _quarantine(e, f"scorer {metric}: item missing from response")
            pending = [e for e in pending if e["status"] == "ok"]
            continue
        except (ScorerError, ProtocolError) as exc:
            for e in pending:
                _quarantine(e, f"scorer {metric}: {type(exc).__name__}: {exc}")
            return
        for e, s in zip(pending, scored):
            e["quality"][metric] = s.score
        return
    for e in pending:
        _quarantine(e, f"scorer {metric}: repeated missing items")


def _quarantine(entry: dict, reason: str) -> None:
    entry["status"] = "quarantined"
    entry["reason"] = reason
    for k in ("record", "uncertainty", "quality", "distinct"):
        entry.pop(k, None)


def _process_group(cfg: RunConfig, res: Resources, units: list[Unit], pool: Optional[ThreadPoolExecutor]) -> list[dict]:
    if pool is not None:
        entries = list(pool.map(lambda u: _decode_unit(res, cfg, u), units))
    else:
        entries = [_decode_unit(res, cfg, u) for u in units]
    items = {u.item.id: u.item for u in units}
    task = units[0].task
    for metric in cfg.metrics.get(task, []):
        if metric in NATIVE_METRICS:
            for e in entries:
                if e["status"] == "ok":
                    refs = items[e["item_id"]].references
                    e["quality"][metric] = _native_quality(metric, e["record"]["text"], refs, cfg.multi_reference)
        else:
            _score_external(res.scorers[metric], metric, entries, items)
    return entries


# --- reports ---------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _scaled(v: Optional[float]) -> Optional[float]:
    return None if v is None else v * REPORT_SCALE


def _prr_rows(entries: Sequence[dict], metrics: Mapping[str, Sequence[str]], ue_methods: Sequence[str],
              n_boot: int, seed: int, selection_split: Optional[str]):
    """Full grid rows plus the per-(task, metric, strategy, ue) curves."""
    by_unit: dict[tuple[str, str], list[dict]] = {}
    params: dict[str, Any] = {}
    for e in entries:
        if e["status"] != "ok":
            continue
        by_unit.setdefault((e["task"], e["strategy_id"]), []).append(e)
        params[e["strategy_id"]] = (e["strategy"], e["params"])
    rows, curves = [], []
    for (task, sid), group in sorted(by_unit.items()):
        group = sorted(group, key=lambda e: e["item_id"])
        strategy, hp = params[sid]
        for metric in metrics.get(task, []):
            for ue in ue_methods:
                recs = [EvalRecord(e["item_id"], e["uncertainty"][ue], {metric: e["quality"][metric]}) for e in group]
                row = {"task": task, "quality_metric": metric, "ue_method": ue, "strategy": strategy,
                       "strategy_id": sid, "hyperparams": json.dumps(hp, sort_keys=True), "n": len(recs)}
                try:
                    r = prr(recs, metric, n_boot=n_boot, seed=seed)
                    row.update(prr_raw=r.prr, boot_mean_raw=r.boot_mean, boot_sd_raw=r.boot_sd, error=None)
                    curves.append({"task": task, "quality_metric": metric, "ue_method": ue, "strategy_id": sid,
                                   "curves": {o: build_curve(recs, o, metric).to_dict()
                                              for o in ("uncertainty", "oracle", "random")}})
                except (DecodeLabError, ValueError) as exc:
                    row.update(prr_raw=None, boot_mean_raw=None, boot_sd_raw=None, error=type(exc).__name__)
                if selection_split is not None:
                    sel = [rr for rr, e in zip(recs, group) if e.get("split") == selection_split]
                    try:
                        row["selection_prr_raw"] = prr(sel, metric).prr
                    except (DecodeLabError, ValueError):
                        row["selection_prr_raw"] = None
                rows.append(row)
    return rows, curves


def _select_best(rows: list[dict], ue_methods: Sequence[str]) -> list[dict]:
    """Per (task, metric, strategy): the hyperparams with max PRR averaged over ue methods.

    Ties resolve to the lexicographically first strategy id. Rows whose PRR is
    undefined for any ue method are not eligible.
    """
    crit = "selection_prr_raw" if rows and "selection_prr_raw" in rows[0] else "prr_raw"
    cells: dict[tuple, dict[str, list[dict]]] = {}
    for r in rows:
        cells.setdefault((r["task"], r["quality_metric"], r["strategy"]), {}).setdefault(r["strategy_id"], []).append(r)
    best = []
    for key in sorted(cells):
        scored = []
        for sid, rs in sorted(cells[key].items()):
            vals = [r[crit] for r in rs]
            if len(rs) == len(ue_methods) and all(v is not None for v in vals):
                scored.append((-math.fsum(vals) / len(vals), sid))
        if not scored:
            continue
        _, sid = min(scored)
        best.extend(sorted(cells[key][sid], key=lambda r: list(ue_methods).index(r["ue_method"])))
    return best


def _summary(entries: Sequence[dict], metrics: Mapping[str, Sequence[str]], ue_methods: Sequence[str]) -> list[dict]:
    """Per (task, strategy id): mean uncertainty scores, quality (x100) and Distinct-1/2."""
    groups: dict[tuple[str, str], list[dict]] = {}
    for e in entries:
        if e["status"] == "ok":
            groups.setdefault((e["task"], e["strategy_id"]), []).append(e)
    out = []
    for (task, sid), g in sorted(groups.items()):
        row: dict[str, Any] = {"task": task, "strategy": g[0]["strategy"], "strategy_id": sid, "n": len(g)}
        for ue in ue_methods:
            row[f"mean_{ue}"] = math.fsum(e["uncertainty"][ue] for e in g) / len(g)
        for m in metrics.get(task, []):
            row[f"quality_{m}"] = REPORT_SCALE * math.fsum(e["quality"][m] for e in g) / len(g)
        for n in ("1", "2"):
            row[f"distinct_{n}"] = f"{math.fsum(e['distinct'][n] for e in g) / len(g):.3f}"
        out.append(row)
    return out


def _public_row(r: dict) -> dict:
    return {
        "task": r["task"],
        "quality_metric": r["quality_metric"],
        "ue_method": r["ue_method"],
        "strategy": r["strategy"],
        "strategy_id": r["strategy_id"],
        "hyperparams": r["hyperparams"],
        "prr": _scaled(r["prr_raw"]),
        "boot_sd": _scaled(r["boot_sd_raw"]),
        "boot_mean": _scaled(r["boot_mean_raw"]),
        "n": r["n"],
        "prr_raw": r["prr_raw"],
        "error": r["error"],
    }


def _rows_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def _best_table(best: Sequence[dict]) -> str:
    """Strategy x dataset grid of selected hyperparameters."""
    cols = sorted({f"{r['task']}/{r['quality_metric']}" for r in best})
    grid: dict[str, dict[str, str]] = {}
    for r in best:
        grid.setdefault(r["strategy"], {})[f"{r['task']}/{r['quality_metric']}"] = r["strategy_id"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", *cols])
    for s in sorted(grid):
        w.writerow([s, *(grid[s].get(c, "") for c in cols)])
    return buf.getvalue()


@dataclass
class Report:
    header: dict
    rows: list[dict]
    best: list[dict]
    summary: list[dict]
    curves: list[dict]
    quarantine: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"header": self.header, "rows": self.rows, "best": self.best, "summary": self.summary,
                "quarantine": self.quarantine}

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {
            "report.json": json.dumps(self.to_dict(), sort_keys=True, indent=1, allow_nan=False) + "\n",
            "report.csv": _rows_csv(self.rows, REPORT_COLUMNS),
            "best_hyperparams.csv": _best_table(self.best),
            "curves.json": json.dumps(self.curves, sort_keys=True, allow_nan=False) + "\n",
        }
        paths = {}
        for name, text in files.items():
            p = out / name
            p.write_text(text, encoding="utf-8")
            paths[name] = p
        return paths


def build_report(
    entries: Sequence[dict],
    metrics: Mapping[str, Sequence[str]],
    ue_methods: Sequence[str],
    n_boot: int = 1000,
    seed: int = 0,
    selection_split: Optional[str] = None,
) -> Report:
    entries = sorted(entries, key=lambda e: e["key"])
    raw_rows, curves = _prr_rows(entries, metrics, ue_methods, n_boot, seed, selection_split)
    best = [_public_row(r) for r in _select_best(raw_rows, ue_methods)]
    quarantined = [{"key": e["key"], "reason": e.get("reason", "")} for e in entries if e["status"] != "ok"]
    header = {
        "n_units": len(entries),
        "n_quarantined": len(quarantined),
        "n_boot": n_boot,
        "boot_seed": seed,
        "ue_methods": list(ue_methods),
        "report_scale": REPORT_SCALE,
        "selection": "max mean PRR over ue methods per (task, metric, strategy)",
        "selection_split": selection_split,
    }
    return Report(header, [_public_row(r) for r in raw_rows], best, _summary(entries, metrics, ue_methods),
                  curves, quarantined)


def report_from_journal(path, n_boot: int = 1000, seed: int = 0, ue_methods: Optional[Sequence[str]] = None,
                        selection_split: Optional[str] = None) -> Report:
    """Recompute every report table from a journal alone."""
    entries = list(read_journal(path).values())
    metrics: dict[str, set] = {}
    ues: set = set()
    for e in entries:
        if e["status"] == "ok":
            metrics.setdefault(e["task"], set()).update(e["quality"])
            ues.update(e["uncertainty"])
    ue_methods = list(ue_methods) if ue_methods else sorted(ues)
    return build_report(entries, {t: sorted(m) for t, m in metrics.items()}, ue_methods, n_boot, seed, selection_split)


# --- entry point -------------------------------------------------------------------


@dataclass
class SweepResult:
    report: Report
    paths: dict[str, Path]
    n_units: int
    n_decoded: int
    n_quarantined: int
    threshold_exceeded: bool


def run_sweep(cfg: RunConfig, resources: Optional[Resources] = None, out: Optional[str] = None,
              workers: Optional[int] = None) -> SweepResult:
    res = resources or load_resources(cfg)
    out_dir = Path(out) if out is not None else cfg.resolve(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    journal = out_dir / JOURNAL
    done = read_journal(journal)
    workers = cfg.workers if workers is None else workers
    concurrent = workers > 1 and res.model.concurrency_safe and (res.amateur is None or res.amateur.concurrency_safe)

    entries: list[dict] = []
    n_decoded = 0
    pool = ThreadPoolExecutor(max_workers=workers) if concurrent else None
    try:
        for group in plan_units(cfg, res):
            todo = [u for u in group if not _reusable(done.get(u.key), cfg, u)]
            fresh = _process_group(cfg, res, todo, pool) if todo else []
            _append(journal, fresh)
            n_decoded += len(fresh)
            fresh_by_key = {e["key"]: e for e in fresh}
            entries.extend(fresh_by_key.get(u.key) or done[u.key] for u in group)
    finally:
        if pool is not None:
            pool.shutdown()

    seed = cfg.seed if cfg.boot_seed is None else int(cfg.boot_seed)
    report = build_report(entries, cfg.metrics, cfg.ue_methods, cfg.n_boot, seed, cfg.selection_split)
    paths = report.write(out_dir)
    nq = report.header["n_quarantined"]
    exceeded = bool(entries) and nq / len(entries) > cfg.quarantine_threshold
    if exceeded:
        log.error("%d of %d work units quarantined (threshold %.3f)", nq, len(entries), cfg.quarantine_threshold)
    return SweepResult(report, paths, len(entries), n_decoded, nq, exceeded)


def _reusable(entry: Optional[dict], cfg: RunConfig, unit: Unit) -> bool:
    # quarantined units are retried on resume; failures may have been transient
    return entry is not None and entry["status"] == "ok" and entry.get("fingerprint") == _fingerprint(cfg, unit)
