"""Acceptance criteria 1-9, each reported as one PASS/FAIL line in the terminal summary."""
import filecmp
import math
import time
from pathlib import Path

import numpy as np

from decodelab.core import EvalRecord, GenerationRecord, Hypothesis
from decodelab.decoding import DecodeConfig, decode, jsd
from decodelab.errors import MissingItemsError, RangeViolationError, VocabMismatchError
from decodelab.eval import bootstrap, prr
from decodelab.harness import load_config, run_sweep
from decodelab.model_api import SyntheticLayeredLM, TableLM, make_self_loop_lm
from decodelab.quality import ExternalScorer, ScoredPair, bleu, distinct_n, normalize_text, rouge_l, serve_scorer
from decodelab.remote import RemoteModel, serve_model
from decodelab.uncertainty import msp, mte

from oracles import bleu_oracle, enumerate_best_sequence, prr_bruteforce, rouge_l_oracle

ROOT = Path(__file__).resolve().parents[1]


def _gen(provider, strategy, params=None, prompt=(0,), n=8, amateur=None):
    cfg = DecodeConfig(strategy, params or {}, max_new_tokens=n)
    return decode(provider, list(prompt), cfg, amateur=amateur).output.generated


def test_criterion_1_beam_matches_exhaustive_search(criterion):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    failures = []
    for trial in range(50):
        V = int(rng.integers(2, 7))
        length = int(rng.integers(1, 5))
        model = TableLM.random(V, seed=int(rng.integers(1 << 30)), order=int(rng.integers(1, 3)))
        prompt = (int(rng.integers(V - 1)),)
        rec = decode(model, prompt, DecodeConfig("beam", {"k": V**length}, max_new_tokens=length))
        want, want_lp = enumerate_best_sequence(model, prompt, length)
        if rec.output.generated != want or abs(rec.output.cum_logprob - want_lp) > 1e-12:
            failures.append((trial, V, length))
    elapsed = time.perf_counter() - t0
    criterion(1, not failures and elapsed < 5.0, f"50/50 beam==exhaustive max-logprob, {elapsed:.2f}s (<5s)" if not failures else f"mismatches {failures}")


def test_criterion_2_reduction_identities(criterion):
    results = {}

    def check(name, pairs):
        results[name] = sum(a == b for a, b in pairs)

    tables = [TableLM.random(6, seed=s, order=2, eos_mass=0.05) for s in range(20)]
    layered = [SyntheticLayeredLM(9, layer_count=4, seed=s, order=2) for s in range(20)]
    amateurs = [SyntheticLayeredLM(9, layer_count=2, seed=100 + s, order=1) for s in range(20)]

    check("beam(k=1)==greedy", [(_gen(m, "beam", {"k": 1}), _gen(m, "greedy")) for m in tables])
    # groups run unpenalized side by side, so each group is a width k/G beam
    check("dbs(lam=0,G=1)==beam(k)", [(_gen(m, "dbs", {"k": 3, "G": 1, "lam": 0.0}), _gen(m, "beam", {"k": 3})) for m in tables])
    check("dbs(lam=0,k=6,G=3)==beam(k/G=2)", [(_gen(m, "dbs", {"k": 6, "G": 3, "lam": 0.0}), _gen(m, "beam", {"k": 2})) for m in tables])
    check("cs(alpha=0)==greedy", [(_gen(m, "cs", {"alpha": 0.0}), _gen(m, "greedy")) for m in layered])
    check("cd(beta=0)==expert greedy", [(_gen(m, "cd", {"beta": 0.0}, amateur=a), _gen(m, "greedy")) for m, a in zip(layered, amateurs)])
    check("fsd(alpha=0)==greedy", [(_gen(m, "fsd", {"alpha": 0.0}), _gen(m, "greedy")) for m in tables])
    check("fsd_vec(alpha=0)==greedy", [(_gen(m, "fsd_vec", {"alpha": 0.0}), _gen(m, "greedy")) for m in layered])
    check("sled(alpha=0)==greedy", [(_gen(m, "sled", {"alpha": 0.0}), _gen(m, "greedy")) for m in layered])
    ok = all(v == 20 for v in results.values())
    criterion(2, ok, ", ".join(f"{k} {v}/20" for k, v in results.items()))


def _records(q, u):
    return [EvalRecord(f"i{i:02d}", float(u[i]), {"m": float(q[i])}) for i in range(len(q))]


def test_criterion_3_prr_sanity(criterion):
    q = np.linspace(0.0, 1.0, 15)
    perfect = prr(_records(q, -q)).prr
    anti = prr(_records(q, q)).prr
    rng = np.random.default_rng(7)
    worst = 0.0
    transforms = [np.exp, lambda x: 3.0 * x + 7.0, lambda x: x**3, np.arctan]
    for _ in range(100):
        qq = rng.random(12)
        uu = rng.normal(size=12)
        ids = [f"i{i:02d}" for i in range(12)]
        ref = prr_bruteforce(list(qq), list(uu), ids)
        for f in transforms:
            worst = max(worst, abs(prr(_records(qq, f(uu))).prr - ref))
    ok = abs(perfect - 1.0) <= 1e-9 and anti < 0 and worst <= 1e-9
    criterion(3, ok, f"perfect={perfect:.12f}, anti={anti:.4f}<0, monotone-transform max|d| vs brute force={worst:.2e}")


def _record_from_probs(probs, entropies=None):
    h = Hypothesis.start((0,))
    for i, p in enumerate(probs):
        e = 0.0 if entropies is None else entropies[i]
        h = h.extend(1, logprob=math.log(p), entropy=e, base_logprob=math.log(p), base_entropy=e, score=math.log(p))
    return GenerationRecord("x", "greedy", {}, h)


def test_criterion_4_closed_forms(criterion):
    m = msp(_record_from_probs([0.5, 0.5]))
    uniform = TableLM(TableLM.random(4, seed=0).vocab, 1, {(i,): [0.25] * 4 for i in range(4)})
    rec = decode(uniform, [0], DecodeConfig("greedy", max_new_tokens=5))
    e = mte(rec)
    j = jsd([1.0, 0.0], [0.0, 1.0])
    d = distinct_n(["a", "a", "a"], 1)
    ok = (
        abs(m - 2 * math.log(2)) <= 1e-12
        and abs(e - math.log(4)) <= 1e-12
        and abs(j - math.log(2)) <= 1e-12
        and d == 1 / 3
    )
    criterion(4, ok, f"msp={m!r}, mte={e!r}, jsd={j!r}, distinct_1={d!r}")


def test_criterion_5_metric_oracles(criterion):
    rng = np.random.default_rng(11)
    words = "a b c d e f the cat sat on mat".split()
    worst_r = worst_b = 0.0
    for _ in range(200):
        hyp = " ".join(rng.choice(words, size=int(rng.integers(1, 9))))
        ref = " ".join(rng.choice(words, size=int(rng.integers(1, 9))))
        ht, rt = normalize_text(hyp), normalize_text(ref)
        worst_r = max(worst_r, abs(rouge_l(hyp, ref) - rouge_l_oracle(ht, rt)))
        worst_b = max(worst_b, abs(bleu(hyp, ref) - bleu_oracle(ht, rt)))
    criterion(5, worst_r <= 1e-9 and worst_b <= 1e-9, f"200 pairs: rougeL max|d|={worst_r:.1e}, bleu max|d|={worst_b:.1e}")


def test_criterion_6_bootstrap(criterion):
    rng = np.random.default_rng(42)
    recs = _records(rng.random(20), rng.random(20))
    a = bootstrap(recs, n_trials=50, seed=42)
    b = bootstrap(recs, n_trials=50, seed=42)
    q = np.linspace(0, 1, 20)
    const = bootstrap(_records(q, -q), seed=3)
    default_trials = bootstrap.__defaults__[0]
    ok = (a.mean, a.sd) == (b.mean, b.sd) and const.sd == 0.0 and const.n_trials == 1000 and default_trials == 1000
    criterion(6, ok, f"replay bit-identical={(a.mean, a.sd) == (b.mean, b.sd)}, constant-PRR sd={const.sd}, default trials={const.n_trials}")


def test_criterion_7_cs_more_diverse_than_greedy(criterion):
    wins = 0
    for seed in range(50):
        model = make_self_loop_lm(seed)
        prompt = (1 + seed % 10,)
        g = _gen(model, "greedy", prompt=prompt, n=32)
        c = _gen(model, "cs", {"alpha": 0.6}, prompt=prompt, n=32)
        wins += distinct_n(c, 2) >= distinct_n(g, 2)
    criterion(7, wins >= 45, f"Distinct-2(cs alpha=0.6) >= Distinct-2(greedy) on {wins}/50 seeds (need >= 45)")


REPORT_FILES = ["report.csv", "report.json", "best_hyperparams.csv", "curves.json"]


def test_criterion_8_golden_run(criterion, tmp_path):
    cfg = load_config(ROOT / "configs" / "toy.yaml")
    timings = []
    outs = []
    for label, workers in (("a", 1), ("b", 1), ("c", 4)):
        t0 = time.perf_counter()
        res = run_sweep(cfg, out=str(tmp_path / label), workers=workers)
        timings.append(time.perf_counter() - t0)
        outs.append(tmp_path / label)
        assert res.n_quarantined == 0
    same = all(
        not filecmp.cmpfiles(outs[0], o, REPORT_FILES, shallow=False)[1] for o in outs[1:]
    )
    n_strategies = len({r["strategy_id"] for r in res.report.rows})
    ok = same and max(timings) < 60.0 and n_strategies == 41
    criterion(8, ok, f"{n_strategies} grid points x 20 items, byte-identical across runs and workers {{1,4}}={same}, slowest run {max(timings):.1f}s (<60s)")


def test_criterion_9_wire_protocol(criterion):
    checks = {}
    model = SyntheticLayeredLM(7, layer_count=3, seed=5)
    with serve_model(model) as srv:
        remote = RemoteModel(srv.url, expected_vocab_size=7)
        local = model.step((1, 2), want_layers=True, want_hidden=True)
        got = remote.step((1, 2), want_layers=True, want_hidden=True)
        checks["step round trip"] = got == local
        checks["decode via wire == in-process"] = _gen(remote, "dola") == _gen(model, "dola")
        try:
            RemoteModel(srv.url, expected_vocab_size=8)
            checks["vocab-mismatch"] = False
        except VocabMismatchError:
            checks["vocab-mismatch"] = True
    pairs = [ScoredPair(f"p{i}", "a b", "a b c") for i in range(3)]
    with serve_scorer("rougeL", lambda it: rouge_l(it["hypothesis"], it["reference"])) as srv:
        sc = ExternalScorer(srv.url)
        out = sc.score(pairs)
        checks["score round trip"] = sc.metric == "rougeL" and all(abs(p.score - rouge_l("a b", "a b c")) < 1e-12 for p in out)
    with serve_scorer("comet", lambda it: 1.5) as srv:
        try:
            ExternalScorer(srv.url).score(pairs)
            checks["range-violation"] = False
        except RangeViolationError:
            checks["range-violation"] = True
    from decodelab._http import JsonServer

    stub = JsonServer({
        "/v1/handshake": lambda b: {"metric": "m", "range": [0, 1]},
        "/v1/score": lambda b: {"scores": [{"id": it["id"], "score": 0.5} for it in b["items"][1:]]},
    })
    with stub:
        try:
            ExternalScorer(stub.url).score(pairs)
            checks["missing-items"] = False
        except MissingItemsError as exc:
            checks["missing-items"] = exc.missing == ["p0"]
    criterion(9, all(checks.values()), ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in checks.items()))
