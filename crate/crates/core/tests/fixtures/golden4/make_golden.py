"""Brute-force oracle for the 4-sample scoring fixture.

Reads the fixture CSVs with plain Python and writes report.golden.csv. The
arithmetic follows the documented definition: mean L2 distance over the
unordered view pairs, averaged over seeds, g minus f, divided by the range.
"""
import csv
import math

SUBSETS = {1: "S_S", 2: "S_C", 3: "S_I", 4: "S_E"}


def load(path):
    views = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            views.setdefault(int(row["sample_id"]), []).append([float(row["dim0"]), float(row["dim1"])])
    return views


def alignment(vs):
    total = 0.0
    n = 0
    for i in range(len(vs)):
        for j in range(i + 1, len(vs)):
            total += math.sqrt(sum((a - b) * (a - b) for a, b in zip(vs[i], vs[j])))
            n += 1
    return total / n


def expected(seeds, sid):
    total = 0.0
    for s in seeds:
        total += alignment(s[sid])
    return total / len(seeds)


f = [load("f0.csv"), load("f1.csv")]
g = [load("g0.csv"), load("g1.csv")]
raw = {sid: expected(g, sid) - expected(f, sid) for sid in SUBSETS}
div = max(raw.values()) - min(raw.values())
with open("report.golden.csv", "w") as out:
    out.write("sample_id,subset,raw,normalized\n")
    for sid in sorted(raw):
        out.write(f"{sid},{SUBSETS[sid]},{raw[sid]!r},{raw[sid] / div!r}\n")
