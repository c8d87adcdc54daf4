#!/usr/bin/env python3
"""Independent reference for exemplar selection; regenerates test fixtures.

This is a direct, loop-by-loop transcription of the message-passing rules and
shares no code with the C++ implementation. Run it from the repository root:

    python3 tests/oracle/ap_oracle.py

It rewrites:
    tests/fixtures/ap_10x10.txt           seeded 10x10 similarity matrix
    tests/fixtures/ap_10x10.expected      exemplar indices, one per line
    tests/fixtures/beta_sweep_layer.txt   synthetic 24x36 layer (negative medians)
    tests/fixtures/beta_sweep.json        exemplar count per beta
"""

import json
import os

import numpy as np

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "fixtures")


def similarity(rows, beta):
    n = len(rows)
    s = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i == j:
                s[i][i] = beta * float(np.median(np.asarray(rows[i], dtype=np.float64)))
            else:
                s[i][j] = -sum((a - b) * (a - b) for a, b in zip(rows[i], rows[j]))
    return s


def run(s, damping=0.5, iterations=200):
    n = len(s)
    if n == 1:
        return [0]
    r = [[0.0] * n for _ in range(n)]
    a = [[0.0] * n for _ in range(n)]
    for _ in range(iterations):
        fresh = [[0.0] * n for _ in range(n)]
        for i in range(n):
            for j in range(n):
                if i == j:
                    fresh[i][i] = s[i][i] - max(s[i][k] for k in range(n) if k != i)
                else:
                    fresh[i][j] = s[i][j] - max(a[i][k] + s[i][k] for k in range(n) if k != j)
        r = [[damping * r[i][j] + (1.0 - damping) * fresh[i][j] for j in range(n)] for i in range(n)]
        fresh = [[0.0] * n for _ in range(n)]
        for i in range(n):
            for j in range(n):
                if i == j:
                    fresh[i][i] = sum(max(0.0, r[k][i]) for k in range(n) if k != i)
                else:
                    total = r[j][j] + sum(max(0.0, r[k][j]) for k in range(n) if k not in (i, j))
                    fresh[i][j] = min(0.0, total)
        a = [[damping * a[i][j] + (1.0 - damping) * fresh[i][j] for j in range(n)] for i in range(n)]
    return decide(r, a)


def decide(r, a):
    """Returns exemplar_of. Lowest index wins ties."""
    n = len(r)
    score = [[r[i][j] + a[i][j] for j in range(n)] for i in range(n)]
    choice = []
    for i in range(n):
        best = 0
        for j in range(1, n):
            if score[i][j] > score[i][best]:
                best = j
        choice.append(best)
    exemplars = [i for i in range(n) if choice[i] == i]
    if not exemplars:
        best = 0
        for i in range(1, n):
            if score[i][i] > score[best][best]:
                best = i
        exemplars = [best]
    out = []
    for i in range(n):
        if i in exemplars:
            out.append(i)
        elif choice[i] in exemplars:
            out.append(choice[i])
        else:
            best = exemplars[0]
            for e in exemplars:
                if score[i][e] > score[i][best]:
                    best = e
            out.append(best)
    return out


def write_matrix(path, rows):
    with open(path, "w") as f:
        for row in rows:
            f.write(" ".join(repr(float(v)) for v in row) + "\n")


def ap_fixture():
    rng = np.random.default_rng(20240601)
    points = rng.normal(size=(10, 2)) + np.repeat(rng.normal(scale=3.0, size=(3, 2)), [4, 3, 3], axis=0)
    n = len(points)
    s = [[-float(np.sum((points[i] - points[j]) ** 2)) for j in range(n)] for i in range(n)]
    off = sorted(s[i][j] for i in range(n) for j in range(n) if i != j)
    pref = float(np.median(off))
    for i in range(n):
        s[i][i] = pref
    write_matrix(os.path.join(FIXTURES, "ap_10x10.txt"), s)
    # Re-read so the oracle sees exactly the doubles the C++ side will parse.
    with open(os.path.join(FIXTURES, "ap_10x10.txt")) as f:
        s = [[float(t) for t in line.split()] for line in f if line.strip()]
    exemplar_of = run(s)
    exemplars = sorted(set(exemplar_of))
    with open(os.path.join(FIXTURES, "ap_10x10.expected"), "w") as f:
        f.write("".join(f"{e}\n" for e in exemplars))
    return exemplars


def beta_sweep_fixture():
    rng = np.random.default_rng(7)
    centers = rng.normal(loc=-0.08, scale=0.06, size=(6, 36))
    members = rng.integers(0, 6, size=24)
    layer = centers[members] + rng.normal(scale=0.03, size=(24, 36))
    layer = np.round(layer, 6)
    medians = np.median(layer, axis=1)
    assert np.all(medians < 0), "every filter median must be negative"
    write_matrix(os.path.join(FIXTURES, "beta_sweep_layer.txt"), layer.tolist())
    with open(os.path.join(FIXTURES, "beta_sweep_layer.txt")) as f:
        rows = [[float(t) for t in line.split()] for line in f if line.strip()]
    betas = ["0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9", "1.0"]
    counts = {}
    for b in betas:
        counts[b] = len(set(run(similarity(rows, float(b)))))
    with open(os.path.join(FIXTURES, "beta_sweep.json"), "w") as f:
        json.dump({"damping": 0.5, "iterations": 200, "counts": counts}, f, indent=1)
        f.write("\n")
    return counts


if __name__ == "__main__":
    os.makedirs(FIXTURES, exist_ok=True)
    print("ap_10x10 exemplars:", ap_fixture())
    print("beta sweep counts:", beta_sweep_fixture())
