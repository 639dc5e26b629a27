#!/usr/bin/env python3
"""Convert 20 Newsgroups to the JSONL corpus format (`{"text": ..., "label": ...}`).

Reads either an extracted 20news-bydate directory (one folder per group) or,
with --sklearn, the copy fetched by scikit-learn. Headers, footers and quotes
are stripped in both cases.
"""

import argparse
import json
import sys
from pathlib import Path


def from_sklearn(subset):
    from sklearn.datasets import fetch_20newsgroups

    data = fetch_20newsgroups(subset=subset, remove=("headers", "footers", "quotes"))
    for text, target in zip(data.data, data.target):
        yield text, data.target_names[target]


def from_directory(root):
    from sklearn.datasets._twenty_newsgroups import strip_newsgroup_footer, strip_newsgroup_header, strip_newsgroup_quoting

    for group in sorted(p for p in Path(root).iterdir() if p.is_dir()):
        for doc in sorted(group.iterdir()):
            text = doc.read_text(encoding="latin-1")
            text = strip_newsgroup_quoting(strip_newsgroup_footer(strip_newsgroup_header(text)))
            yield text, group.name


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    src = ap.add_mutually_exclusive_group(required=True)
    src.add_argument("--dir", help="extracted 20news-bydate-train (or -test) directory")
    src.add_argument("--sklearn", choices=["train", "test", "all"], help="subset to fetch via scikit-learn")
    ap.add_argument("--out", required=True)
    ap.add_argument("--keep-empty", action="store_true", help="keep documents that are empty after stripping")
    args = ap.parse_args()

    rows = from_sklearn(args.sklearn) if args.sklearn else from_directory(args.dir)
    kept = dropped = 0
    with open(args.out, "w", encoding="utf-8") as f:
        for text, label in rows:
            if not text.strip() and not args.keep_empty:
                dropped += 1
                continue
            f.write(json.dumps({"text": text, "label": label}) + "\n")
            kept += 1
    print(f"wrote {kept} documents to {args.out} ({dropped} empty dropped)", file=sys.stderr)


if __name__ == "__main__":
    main()
