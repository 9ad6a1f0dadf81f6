"""Shared helpers for the experiment scripts."""

import argparse
import csv
import sys

MODES = ("mvpbt", "mvpbt-nocache-nogc", "btree-baseline")


def parser(doc: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=doc)
    p.add_argument("--scale", type=float, default=1.0, help="multiply record/op counts (0.1 for a quick run)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="CSV output path (default: stdout)")
    return p


def emit(rows: list[dict], out=None) -> None:
    if not rows:
        return
    fh = open(out, "w", newline="") if out else sys.stdout
    w = csv.DictWriter(fh, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)
    if out:
        fh.close()
