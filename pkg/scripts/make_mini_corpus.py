"""Write the 20-item QA mini corpus and the word list used by configs/toy.yaml."""
import argparse
import json
from pathlib import Path

import numpy as np

WORDS = (
    "the a of to in is was who what where when which river city king queen year war book song "
    "film paris london rome nile amazon first last north south red blue gold"
).split()


def make_items(n: int, seed: int):
    rng = np.random.default_rng(seed)
    items = []
    for i in range(n):
        q = " ".join(rng.choice(WORDS, size=int(rng.integers(4, 8))))
        ref = " ".join(rng.choice(WORDS, size=int(rng.integers(4, 10))))
        items.append({"id": f"q{i:03d}", "question": q + "?", "references": [ref]})
    return items


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="data")
    ap.add_argument("-n", type=int, default=20)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "mini_qa.jsonl", "w", encoding="utf-8") as fh:
        for item in make_items(args.n, args.seed):
            fh.write(json.dumps(item, sort_keys=True) + "\n")
    (out / "words.txt").write_text("\n".join(WORDS) + "\n", encoding="utf-8")
    print(f"wrote {args.n} items to {out / 'mini_qa.jsonl'}")


if __name__ == "__main__":
    main()
