"""Hand-rolled Spearman / group-mean oracle for the agreement-correlation
fixture, plus the generator that froze tests/data/correlation_expected.json.

Spearman is computed the long way: average ranks for ties, then the Pearson
product-moment of the rank vectors.  Independent of scipy.

Run as a script to regenerate the frozen fixture:

    python tests/oracles/correlation_oracle.py
"""
import json
import math
from pathlib import Path

# 12 review instances: (agreement level in 0..3, metric score)
FIXTURE = [
    ("inst-00", 3, 0.92), ("inst-01", 3, 0.88), ("inst-02", 3, 0.95),
    ("inst-03", 2, 0.70), ("inst-04", 2, 0.55), ("inst-05", 2, 0.66),
    ("inst-06", 1, 0.40), ("inst-07", 1, 0.52), ("inst-08", 1, 0.31),
    ("inst-09", 0, 0.12), ("inst-10", 0, 0.25), ("inst-11", 0, 0.08),
]


def average_ranks(values):
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0  # ranks are 1-based
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def pearson(xs, ys):
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    num = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    dx = math.sqrt(sum((x - mx) ** 2 for x in xs))
    dy = math.sqrt(sum((y - my) ** 2 for y in ys))
    return num / (dx * dy)


def spearman(levels, scores):
    return pearson(average_ranks(levels), average_ranks(scores))


def group_means(rows):
    by_level = {}
    for _, level, score in rows:
        by_level.setdefault(level, []).append(score)
    return {
        level: sum(vals) / len(vals)
        for level, vals in sorted(by_level.items())
    }


if __name__ == "__main__":
    levels = [r[1] for r in FIXTURE]
    scores = [r[2] for r in FIXTURE]
    payload = {
        "instances": [
            {"instance_id": i, "level": l, "score": s} for i, l, s in FIXTURE
        ],
        "group_means": {str(k): v for k, v in group_means(FIXTURE).items()},
        "spearman": spearman(levels, scores),
    }
    out = Path(__file__).resolve().parent.parent / "data" / "correlation_expected.json"
    out.write_text(json.dumps(payload, indent=1) + "\n")
    print(f"spearman={payload['spearman']!r} -> {out}")
