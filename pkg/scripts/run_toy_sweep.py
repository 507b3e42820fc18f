"""Run the toy full-grid sweep twice (1 and 4 workers) and check the reports match byte for byte."""
import argparse
import filecmp
import subprocess
import sys
import tempfile
import time
from pathlib import Path

from decodelab.harness import load_config, run_sweep

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "toy.yaml"))
    args = ap.parse_args()
    if not (ROOT / "data" / "mini_qa.jsonl").exists():
        subprocess.run([sys.executable, str(ROOT / "scripts" / "make_mini_corpus.py"), "--out", str(ROOT / "data")], check=True)
    cfg = load_config(args.config)
    with tempfile.TemporaryDirectory() as tmp:
        outs = []
        for workers in (1, 4):
            out = Path(tmp) / f"w{workers}"
            t0 = time.perf_counter()
            res = run_sweep(cfg, out=str(out), workers=workers)
            print(f"workers={workers}: {res.n_units} units in {time.perf_counter() - t0:.1f}s")
            outs.append(out)
        names = ["report.csv", "report.json", "best_hyperparams.csv", "curves.json"]
        _, mismatch, errors = filecmp.cmpfiles(outs[0], outs[1], names, shallow=False)
        print("identical" if not mismatch and not errors else f"DIFFER: {mismatch + errors}")
        print((outs[0] / "best_hyperparams.csv").read_text())


if __name__ == "__main__":
    main()
