import json
import subprocess
import sys
from pathlib import Path

import pytest

from decodelab.errors import ConfigError, DatasetParseError, DuplicateIdError
from decodelab.harness import (
    DatasetItem,
    config_from_dict,
    dump_items,
    ingest,
    load_config,
    load_resources,
    read_journal,
    render_prompt,
    report_from_journal,
    run_sweep,
    validate,
)
from decodelab.harness.cli import main
from decodelab.harness.config import DEFAULT_METRICS
from decodelab.model_api import TableLM
from decodelab.quality import rouge_l, serve_scorer

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "scripts"))
from make_mini_corpus import WORDS, make_items  # noqa: E402


def write_jsonl(path, rows):
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in rows), encoding="utf-8")
    return path


@pytest.fixture
def corpus(tmp_path):
    path = write_jsonl(tmp_path / "qa.jsonl", make_items(20, seed=7))
    (tmp_path / "words.txt").write_text("\n".join(WORDS), encoding="utf-8")
    return path


def toy_config(tmp_path, corpus, **overrides):
    raw = {
        "model": {"kind": "table", "seed": 1, "order": 1, "eos_mass": 0.05},
        "tokenizer": {"words_file": "words.txt"},
        "datasets": [{"path": corpus.name, "task": "qa"}],
        "strategies": {"greedy": "default", "beam": [{"k": 1}, {"k": 3}]},
        "ue_methods": ["msp", "mte"],
        "bootstrap": {"n_trials": 50, "seed": 0},
        "max_new_tokens": {"qa": 8},
        # the bare question as prompt, so an order-1 model sees item-specific context
        "templates": {"qa": "{question}"},
        "out": "out",
    }
    raw.update(overrides)
    return config_from_dict(raw, base_dir=tmp_path, env={})


# --- ingest ---------------------------------------------------------------------------


def test_ingest_valid_and_malformed(tmp_path):
    rows = [
        {"id": 1, "question": "q1", "references": ["a"]},
        {"id": 2, "question": "q2", "references": ["b", "c"]},
        {"id": 3, "question": "q3", "reference": "d"},
    ]
    assert len(ingest(write_jsonl(tmp_path / "a.jsonl", rows), "qa").items) == 3
    bad = rows + [{"id": 4, "question": "q4"}] + [{"id": 10 + i, "question": "x", "references": ["y"]} for i in range(6)]
    res = ingest(write_jsonl(tmp_path / "b.jsonl", bad), "qa")
    assert res.malformed == [(4, "qa items need non-empty 'references'")]
    assert len(res.items) == 9


def test_ingest_duplicate_and_threshold(tmp_path):
    dup = [{"id": "x", "text": "t", "references": ["r"]}] * 2
    with pytest.raises(DuplicateIdError):
        ingest(write_jsonl(tmp_path / "d.jsonl", dup), "ts")
    junk = ["{not json", {"id": "a", "text": "t", "references": ["r"]}]
    with pytest.raises(DatasetParseError) as info:
        ingest(write_jsonl(tmp_path / "j.jsonl", junk), "ts")
    assert info.value.malformed[0][0] == 1


def test_ingest_cg_needs_aux(tmp_path):
    res = ingest(write_jsonl(tmp_path / "c.jsonl", [{"id": "f", "prompt": "def f():", "aux": "assert f() is None"}]), "cg")
    assert res.items[0].aux == "assert f() is None" and res.items[0].references == ()
    with pytest.raises(ValueError):
        DatasetItem("g", "cg", "def g():")


def test_fixture_round_trip(tmp_path, corpus):
    items = ingest(corpus, "qa").items
    dump_items(items, tmp_path / "again.jsonl")
    assert ingest(tmp_path / "again.jsonl", "qa").items == items


# --- prompts ----------------------------------------------------------------------------


def test_prompt_templates():
    qa = DatasetItem("1", "qa", "Q?", ("a",))
    assert render_prompt(qa) == "# Question: Q?\n\n# Answer:"
    mt = DatasetItem("2", "mt", "Guten Tag.", ("Good day.",))
    assert render_prompt(mt).startswith("Translate the following sentence from German to English.")
    ts = DatasetItem("3", "ts", "Long text", ("short",))
    assert render_prompt(ts).endswith("Summarize the above article in 1 sentence.")
    cg = DatasetItem("4", "cg", "def f(x):\n    '''{doc}'''", aux="assert 1")
    assert render_prompt(cg).endswith("def f(x):\n    '''{doc}'''")
    assert render_prompt(ts, templates={"ts": "{text}"}) == "Long text"
    with pytest.raises(ValueError):
        render_prompt(qa, task="xx")


def test_prompt_braces_in_input_are_not_resubstituted():
    item = DatasetItem("1", "qa", "what is {text}?", ("a",))
    assert render_prompt(item) == "# Question: what is {text}?\n\n# Answer:"


# --- config ----------------------------------------------------------------------------


def test_config_defaults_and_env_overrides(tmp_path, corpus):
    raw = {
        "model": {"kind": "remote", "url": "http://old"},
        "datasets": [{"path": corpus.name, "task": "qa"}],
        "scorers": {"alignscore": {"url": "http://x"}},
    }
    env = {
        "DECODELAB_MODEL_URL": "http://new",
        "DECODELAB_SCORER_ALIGNSCORE_URL": "http://scorer",
        "DECODELAB_SCORER_ALIGNSCORE_API_KEY": "k",
    }
    cfg = config_from_dict(raw, base_dir=tmp_path, env=env)
    assert cfg.model["url"] == "http://new"
    assert cfg.scorers["alignscore"] == {"url": "http://scorer", "api_key": "k"}
    assert cfg.metrics == DEFAULT_METRICS
    assert cfg.n_boot == 1000
    assert set(cfg.strategies) == {"greedy", "beam", "dbs", "cs", "cd", "fsd", "fsd_vec", "dola", "sled", "temperature", "top_p"}


def test_validate_fails_fast(tmp_path, corpus):
    cfg = toy_config(tmp_path, corpus, metrics={"qa": ["rougeL", "alignscore"]},
                     strategies={"dola": "default", "cd": "default", "beam": [{"k": 0}]})
    problems = validate(cfg)
    joined = "\n".join(problems)
    assert "alignscore" in joined
    assert "dola needs layer logits" in joined
    assert "amateur" in joined
    assert "k must be >= 1" in joined
    with pytest.raises(ConfigError):
        load_resources(cfg)
    with pytest.raises(ConfigError):
        config_from_dict({"datasets": []}, env={})


# --- sweep -----------------------------------------------------------------------------


class CountingModel:
    """Wraps a provider, counting steps and optionally failing on a token."""

    def __init__(self, inner, fail_on=None):
        self.inner = inner
        self.capabilities = inner.capabilities
        self.concurrency_safe = True
        self.calls = 0
        self.fail_on = fail_on

    def step(self, context, want_layers=False, want_hidden=False):
        self.calls += 1
        if self.fail_on is not None and self.fail_on in context:
            raise RuntimeError("backend error")
        return self.inner.step(context, want_layers, want_hidden)


def test_golden_sweep_rows(tmp_path, corpus):
    cfg = toy_config(tmp_path, corpus)
    result = run_sweep(cfg)
    rows = result.report.rows
    cells = {}
    for r in rows:
        cells.setdefault((r["task"], r["quality_metric"], r["ue_method"]), []).append(r["strategy_id"])
    assert set(cells) == {("qa", "rougeL", "msp"), ("qa", "rougeL", "mte")}
    assert all(sorted(v) == ["beam[k=1]", "beam[k=3]", "greedy"] for v in cells.values())
    for r in rows:
        assert r["n"] == 20
        if r["prr_raw"] is not None:
            assert r["prr"] == 100.0 * r["prr_raw"]
            assert r["boot_sd"] is not None
    header = json.loads((tmp_path / "out" / "report.json").read_text())["header"]
    assert header["n_quarantined"] == 0 and header["report_scale"] == 100.0
    csv_lines = (tmp_path / "out" / "report.csv").read_text().splitlines()
    assert csv_lines[0] == "task,quality_metric,ue_method,strategy,hyperparams,prr,boot_sd,n,prr_raw"
    assert len(csv_lines) == 1 + 6
    best = (tmp_path / "out" / "best_hyperparams.csv").read_text().splitlines()
    assert best[0] == "strategy,qa/rougeL"
    assert [line.split(",")[0] for line in best[1:]] == ["beam", "greedy"]


def test_sweep_quality_matches_direct_metric(tmp_path, corpus):
    cfg = toy_config(tmp_path, corpus)
    run_sweep(cfg)
    items = {i.id: i for i in ingest(corpus, "qa").items}
    for e in read_journal(tmp_path / "out" / "journal.jsonl").values():
        assert e["quality"]["rougeL"] == rouge_l(e["record"]["text"], items[e["item_id"]].references[0])


def test_resume_from_journal_does_not_redecode(tmp_path, corpus):
    cfg = toy_config(tmp_path, corpus)
    res = load_resources(cfg)
    res.model = CountingModel(res.model)
    first = run_sweep(cfg, res)
    report_bytes = (tmp_path / "out" / "report.json").read_bytes()
    calls = res.model.calls
    assert first.n_decoded == 60 and calls > 0
    for name in ("report.json", "report.csv", "best_hyperparams.csv", "curves.json"):
        (tmp_path / "out" / name).unlink()
    second = run_sweep(cfg, res)
    assert second.n_decoded == 0 and res.model.calls == calls
    assert (tmp_path / "out" / "report.json").read_bytes() == report_bytes


def test_torn_journal_line_is_ignored(tmp_path, corpus):
    cfg = toy_config(tmp_path, corpus)
    run_sweep(cfg)
    journal = tmp_path / "out" / "journal.jsonl"
    lines = journal.read_text().splitlines(keepends=True)
    journal.write_text("".join(lines[:-1]) + lines[-1][: len(lines[-1]) // 2])
    again = run_sweep(cfg)
    assert again.n_decoded == 1


def test_quarantine_excludes_items_and_sets_flag(tmp_path, corpus):
    cfg = toy_config(tmp_path, corpus, quarantine_threshold=0.05)
    res = load_resources(cfg)
    # fail whenever the context contains the first question's final token
    bad_token = res.tokenizer.encode(res.items["qa"][0].input)[-1]
    res.model = CountingModel(res.model, fail_on=bad_token)
    result = run_sweep(cfg, res)
    nq = result.n_quarantined
    assert nq > 0 and nq % 3 == 0
    assert result.report.header["n_quarantined"] == nq
    assert all(r["n"] == 20 - nq // 3 for r in result.report.rows)
    reasons = {q["reason"] for q in result.report.quarantine}
    assert all(r.startswith("ProviderStepError") for r in reasons)
    assert result.threshold_exceeded == (nq / 60 > 0.05)


def test_external_scorer_in_sweep(tmp_path, corpus):
    def fn(item):
        return len(item["hypothesis"].split()) % 5 / 4

    with serve_scorer("alignscore", fn) as srv:
        cfg = toy_config(tmp_path, corpus, metrics={"qa": ["rougeL", "alignscore"]},
                         scorers={"alignscore": {"url": srv.url}})
        result = run_sweep(cfg)
    metrics = {r["quality_metric"] for r in result.report.rows}
    assert metrics == {"rougeL", "alignscore"}
    entries = read_journal(tmp_path / "out" / "journal.jsonl").values()
    assert all(e["quality"]["alignscore"] == fn({"hypothesis": e["record"]["text"]}) for e in entries)


def test_scorer_missing_items_are_quarantined(tmp_path, corpus):
    from decodelab._http import JsonServer

    def score(body):
        return {"scores": [{"id": it["id"], "score": 0.5} for it in body["items"] if it["id"] != "q003"]}

    stub = JsonServer({"/v1/handshake": lambda b: {"metric": "comet", "range": [0, 1]}, "/v1/score": score})
    with stub:
        cfg = toy_config(tmp_path, corpus, metrics={"qa": ["comet"]}, scorers={"comet": {"url": stub.url}})
        result = run_sweep(cfg)
    assert result.n_quarantined == 3
    assert all("q003" in q["key"] for q in result.report.quarantine)


def test_report_from_journal_matches_run(tmp_path, corpus):
    cfg = toy_config(tmp_path, corpus)
    result = run_sweep(cfg)
    again = report_from_journal(tmp_path / "out" / "journal.jsonl", n_boot=50, seed=0)
    assert again.rows == result.report.rows
    assert again.best == result.report.best


def test_selection_split(tmp_path):
    items = make_items(20, seed=7)
    for i, it in enumerate(items):
        it["split"] = "dev" if i % 2 else "test"
    path = write_jsonl(tmp_path / "qa.jsonl", items)
    (tmp_path / "words.txt").write_text("\n".join(WORDS), encoding="utf-8")
    cfg = toy_config(tmp_path, path, selection_split="dev")
    result = run_sweep(cfg)
    assert result.report.header["selection_split"] == "dev"
    assert len(result.report.best) == 4


def test_worker_count_does_not_change_bytes(tmp_path, corpus):
    cfg = toy_config(tmp_path, corpus, strategies={"greedy": "default", "temperature": "default", "top_p": "default"})
    run_sweep(cfg, out=str(tmp_path / "w1"), workers=1)
    run_sweep(cfg, out=str(tmp_path / "w4"), workers=4)
    for name in ("report.json", "report.csv", "best_hyperparams.csv", "curves.json"):
        assert (tmp_path / "w1" / name).read_bytes() == (tmp_path / "w4" / name).read_bytes()


# --- cli --------------------------------------------------------------------------------


def _write_yaml(tmp_path, corpus, **extra):
    import yaml

    raw = {
        "model": {"kind": "table", "seed": 1, "eos_mass": 0.05},
        "tokenizer": {"words_file": "words.txt"},
        "datasets": [{"path": corpus.name, "task": "qa"}],
        "strategies": {"greedy": "default", "beam": [{"k": 3}]},
        "bootstrap": {"n_trials": 20},
        "max_new_tokens": {"qa": 6},
        "templates": {"qa": "{question}"},
        "out": "out",
    }
    raw.update(extra)
    p = tmp_path / "run.yaml"
    p.write_text(yaml.safe_dump(raw))
    return p


def test_cli_validate_and_run(tmp_path, corpus, capsys):
    good = _write_yaml(tmp_path, corpus)
    assert main(["validate", str(good)]) == 0
    bad = _write_yaml(tmp_path, corpus, metrics={"qa": ["comet"]})
    assert main(["validate", str(bad)]) == 1
    assert "comet" in capsys.readouterr().out
    good = _write_yaml(tmp_path, corpus)
    assert main(["run", str(good), "--workers", "2", "--seed", "3"]) == 0
    assert main(["prr", str(tmp_path / "out" / "journal.jsonl"), "--n-boot", "20", "--out", str(tmp_path / "re")]) == 0
    assert (tmp_path / "re" / "report.csv").exists()
    assert main(["diff", str(tmp_path / "out"), str(tmp_path / "re"), "--out", str(tmp_path / "d.json")]) == 0
    diff = json.loads((tmp_path / "d.json").read_text())
    assert all(e["delta"] == 0 for e in diff["entries"])


def test_cli_quarantine_exit_code(tmp_path, corpus):
    from decodelab._http import JsonServer

    stub = JsonServer({"/v1/handshake": lambda b: {"metric": "comet", "range": [0, 1]},
                       "/v1/score": lambda b: {"scores": []}})
    with stub:
        cfg = _write_yaml(tmp_path, corpus, metrics={"qa": ["comet"]}, scorers={"comet": {"url": stub.url}})
        assert main(["run", str(cfg)]) == 2


def test_cli_entry_point_runs():
    out = subprocess.run([sys.executable, "-m", "decodelab.harness.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "validate" in out.stdout


def test_shipped_toy_config_validates():
    cfg = load_config(ROOT / "configs" / "toy.yaml")
    assert validate(cfg) == []


def test_table_model_from_config(tmp_path, corpus):
    cfg = toy_config(tmp_path, corpus)
    res = load_resources(cfg)
    assert isinstance(res.model, TableLM)
    assert res.model.capabilities.vocab == res.tokenizer.vocab
