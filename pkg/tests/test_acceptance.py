"""Acceptance criteria, one test each; a PASS/FAIL line per criterion is
printed at the end of the session (see ``conftest.py``).

Run directly with ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.stats import norm

from breathtda.cli import main as cli
from breathtda.eval import metrics, read_metrics_report, wilcoxon_signed_rank
from breathtda.learner import BoostConfig, fit, predict
from breathtda.persistence import PointCloud, pairwise_distances, rips_pd, sublevel_pd0
from breathtda.respiration import BreathCycles, build_irr, fritsch_carlson_slopes, sqi
from breathtda.signal import TimeSeries
from breathtda.vectorize import PS_NAMES, hepc, hermite_functions, persistence_stats
import oracles

RESULTS: list[str] = []
JOBS = min(4, os.cpu_count() or 1)


def report(name: str, ok: bool, detail: str) -> None:
    RESULTS.append(f"{'PASS' if ok else 'FAIL'}: {name} -- {detail}")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------- persistence


def test_sublevel_oracle():
    rng = np.random.default_rng(20240101)
    t0 = time.perf_counter()
    bad = 0
    for k in range(1000):
        n = int(rng.integers(1, 65))
        x = rng.integers(-5, 6, n).astype(float) if k % 2 else rng.normal(size=n)
        if not np.array_equal(sublevel_pd0(x).sorted_points(), oracles.sweep_sublevel_pd0(x)):
            bad += 1
    dt = time.perf_counter() - t0
    report("sublevel oracle equivalence", bad == 0 and dt < 10, f"{1000 - bad}/1000 exact, {dt:.2f} s (< 10 s)")


def test_rips_oracle():
    rng = np.random.default_rng(20240102)
    t0 = time.perf_counter()
    bad_pd = bad_mst = 0
    for k in range(200):
        n, d = int(rng.integers(1, 9)), int(rng.integers(1, 4))
        pts = rng.normal(size=(n, d)) if k % 2 else rng.integers(0, 3, (n, d)).astype(float)
        dist = pairwise_distances(pts)
        h0, h1 = rips_pd(PointCloud(pts))
        ref = oracles.naive_rips(dist)
        if not (np.array_equal(h0.sorted_points(), ref[0]) and np.array_equal(h1.sorted_points(), ref[1])):
            bad_pd += 1
        # csgraph drops zero edges, so merge duplicate points before the MST
        mst = np.sort(minimum_spanning_tree(pairwise_distances(np.unique(pts, axis=0))).data)
        if not np.array_equal(np.sort(h0.deaths[np.isfinite(h0.deaths)]), mst):
            bad_mst += 1
    dt = time.perf_counter() - t0
    ok = bad_pd == 0 and bad_mst == 0 and dt < 60
    report("Rips oracle equivalence", ok, f"{200 - bad_pd}/200 diagrams exact, {200 - bad_mst}/200 MST deaths exact, {dt:.2f} s (< 60 s)")


def test_four_corner_h1():
    sq = PointCloud(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))
    h1 = rips_pd(sq)[1].points
    ok = h1.shape == (1, 2) and np.allclose(h1, [[1.0, math.sqrt(2.0)]], atol=1e-9, rtol=0)
    report("four-corner H1", ok, f"H1 = {h1.tolist()} vs [(1, sqrt 2)]")


# ---------------------------------------------------------------------- vectorize


def test_ps_formulas():
    from breathtda.persistence import PersistenceDiagram

    v = dict(zip(PS_NAMES, persistence_stats(PersistenceDiagram(np.array([[0.0, 4.0], [1.0, 2.0]]))).values))
    g = persistence_stats(PersistenceDiagram(np.array([[0.0, 1.0]]))).values[-1]
    z = 1 / math.sqrt(2)
    g_ref = norm.cdf(z) + math.sqrt(2) * norm.pdf(z)
    ok = (
        abs(v["mean_life"] - 2.5) <= 1e-4 and abs(v["std_life"] - 1.5) <= 1e-4
        and abs(v["entropy_life"] - 0.5004) <= 1e-4 and abs(g - 1.1996) <= 1e-4 and abs(g - g_ref) <= 1e-12
    )
    detail = (f"mean {v['mean_life']:.6f}, std {v['std_life']:.6f}, epy {v['entropy_life']:.6f}, "
              f"|G|_1 {g:.6f} (scipy {g_ref:.6f})")
    report("PS formula check", ok, detail)


def test_hepc_quadrature():
    from breathtda.persistence import PersistenceDiagram

    rng = np.random.default_rng(20240103)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 11))
        b = rng.uniform(-3, 3, n)
        pts = np.column_stack([b, b + rng.uniform(0.05, 3, n)])
        knots = np.unique(pts.ravel())
        ref = []
        for m in range(15):
            ref.append(sum(
                integrate.quad(lambda x: oracles.entropy_curve(pts, x) * oracles.hermite_function(m, x),
                               lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
                for lo, hi in zip(knots[:-1], knots[1:])
            ))
        worst = max(worst, float(np.max(np.abs(hepc(PersistenceDiagram(pts)).values - ref))))
    gram = np.empty((15, 15))
    for m in range(15):
        for k in range(m, 15):
            gram[m, k] = gram[k, m] = integrate.quad(
                lambda x: hermite_functions(x, 14)[m] * hermite_functions(x, 14)[k], -np.inf, np.inf,
                epsabs=1e-12, limit=200,
            )[0]
    ortho = float(np.max(np.abs(gram - np.eye(15))))
    report("HEPC vs quadrature", worst < 1e-6 and ortho < 1e-8,
           f"max coefficient error {worst:.2e} (< 1e-6), orthonormality error {ortho:.2e} (< 1e-8)")


# ---------------------------------------------------------------------- respiration


def test_sqi_bounds_and_invariance():
    rng = np.random.default_rng(20240104)
    fs = 25.0
    out_of_range = not_invariant = 0
    for _ in range(1000):
        x = TimeSeries(rng.normal(size=int(180 * fs)) * rng.uniform(0.01, 100), fs)
        q = sqi(x)
        out_of_range += not 0.0 <= q <= 1.0
        # power-of-two scaling is exact in floating point
        not_invariant += sqi(TimeSeries(x.samples * 8.0, fs)) != q
    t = np.arange(int(180 * fs)) / fs
    sine = sqi(TimeSeries(np.sin(2 * np.pi * 0.3 * t), fs))
    low = sum(sqi(TimeSeries(np.random.default_rng(s).normal(size=t.size), fs)) <= 0.3 for s in range(100))
    ok = out_of_range == 0 and not_invariant == 0 and sine >= 0.9 and low >= 99
    report("SQI bounds and invariance", ok,
           f"{1000 - out_of_range}/1000 in [0,1], {1000 - not_invariant}/1000 scale-exact, "
           f"sinusoid {sine:.4f} (>= 0.9), noise <= 0.3 in {low}/100 (>= 99)")


def test_irr():
    irr = build_irr(BreathCycles(np.arange(0.0, 400.0, 4.0)), 360.0)
    flat = float(np.max(np.abs(irr.samples - 15.0)))
    rng = np.random.default_rng(20240105)
    overshoot = 0.0
    for _ in range(200):
        x = np.cumsum(rng.uniform(0.1, 3, 8))
        y = np.cumsum(rng.exponential(1.0, 8) * (rng.random(8) < 0.7))
        m = fritsch_carlson_slopes(x, y)
        xs = np.linspace(x[0], x[-1], 2000)
        k = np.clip(np.searchsorted(x, xs, side="right") - 1, 0, x.size - 2)
        h = x[k + 1] - x[k]
        s = (xs - x[k]) / h
        ys = ((2 * s**3 - 3 * s**2 + 1) * y[k] + (s**3 - 2 * s**2 + s) * h * m[k]
              + (-2 * s**3 + 3 * s**2) * y[k + 1] + (s**3 - s**2) * h * m[k + 1])
        overshoot = max(overshoot, float(-np.min(np.diff(ys))), float(np.max(ys) - y[-1]), float(y[0] - np.min(ys)))
    ok = flat <= 1e-6 and overshoot <= 1e-12
    report("IRR correctness", ok, f"max |IRR - 15| = {flat:.1e} (<= 1e-6), worst overshoot/decrease {overshoot:.1e}")


# ---------------------------------------------------------------------- eval and learner


def test_published_confusion_matrix():
    m = metrics([[62.1, 5.5, 18.9], [8.2, 58.8, 14.3], [45.9, 35.4, 342.9]])
    ok = abs(m.accuracy - 0.7835) <= 5e-4 and abs(m.kappa - 0.561) <= 1e-3
    report("metric check on published confusion matrix", ok, f"accuracy {m.accuracy:.5f}, kappa {m.kappa:.5f}")


def test_wilcoxon_exact():
    p5 = wilcoxon_signed_rank([1, 2, 3, 4, 5], [0] * 5).p_value
    rng = np.random.default_rng(20240106)
    bad = 0
    for trial in range(100):
        n = int(rng.integers(5, 9))
        d = rng.integers(-4, 5, n).astype(float) if trial % 2 else rng.normal(size=n)
        if np.all(d == 0):
            d[0] = 1.0
        if abs(wilcoxon_signed_rank(d, np.zeros(n)).p_value - oracles.wilcoxon_enumerate(d)) > 1e-12:
            bad += 1
    report("Wilcoxon exact check", p5 == 0.03125 and bad == 0, f"n=5 p = {p5!r}, {100 - bad}/100 enumeration matches")


def test_learner_sanity():
    rng = np.random.default_rng(20240107)
    n = 200
    X = rng.normal(size=(n, 4))
    side = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    X[:, 0] = side * np.where(np.abs(X[:, 0]) > 0.7, 2.0, 1.0)
    y = np.where(side > 0, "Wake", "REM")
    acc = float(np.mean(predict(fit(X, y, BoostConfig(n_rounds=20)), X)[0] == y))

    y3 = np.array(["Wake", "REM", "NREM"])[rng.integers(0, 3, 300)]
    X3 = rng.normal(size=(300, 5)) + (y3[:, None] == np.array(["Wake", "REM", "NREM", "x", "x"])) * 1.5
    cfg = BoostConfig(n_rounds=30, seed=11)
    pa, pb = predict(fit(X3, y3, cfg), X3)[1], predict(fit(X3, y3, cfg), X3)[1]
    Z = np.column_stack([np.exp(X3[:, 0]), X3[:, 1] ** 3, 2 * X3[:, 2] + 7, np.arctan(X3[:, 3]), X3[:, 4]])
    same = np.array_equal(predict(fit(X3, y3, cfg), X3)[0], predict(fit(Z, y3, cfg), Z)[0])
    ok = acc == 1.0 and pa.tobytes() == pb.tobytes() and same
    report("learner sanity", ok, f"toy accuracy {acc:.3f} at 20 rounds, bit-exact rerun {pa.tobytes() == pb.tobytes()}, "
                                 f"monotone-transform labels identical {same}")


# ---------------------------------------------------------------------- end to end


def _mean(report_dir: Path, feature_set: str) -> dict[str, float]:
    rows = read_metrics_report(report_dir / f"metrics_{feature_set}.csv")
    mean = next(r for r in rows if r["subject_id"] == "mean")
    return {k: float(v) for k, v in mean.items() if k not in ("subject_id", "n_test")}


@pytest.mark.slow
def test_end_to_end(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e")
    t0 = time.perf_counter()
    assert cli(["synth", "--subjects", "8", "--epochs", "240", "--seed", "7", "--out", str(root / "data")]) == 0
    args = ["losocv", "--data", str(root / "data"), "--cache", str(root / "cache"), "--jobs", str(JOBS)]
    assert cli(args + ["--set", "all", "--set", "tda", "--set", "cla", "--out", str(root / "report")]) == 0
    dt = time.perf_counter() - t0
    m = {s: _mean(root / "report", s) for s in ("all", "tda", "cla")}
    best_other = max(m["tda"]["kappa"], m["cla"]["kappa"])
    ok = (
        dt < 900 and m["all"]["balanced_accuracy"] >= 0.80 and m["all"]["kappa"] >= 0.55
        and m["all"]["kappa"] >= best_other - 0.02
    )
    detail = (f"{dt:.0f} s on {JOBS} worker(s) (< 900 s); all: balanced {m['all']['balanced_accuracy']:.4f}, "
              f"kappa {m['all']['kappa']:.4f}; tda kappa {m['tda']['kappa']:.4f}; cla kappa {m['cla']['kappa']:.4f}")
    report("end-to-end synthetic experiment", ok, detail)


@pytest.mark.slow
def test_sqi_filter_direction(tmp_path_factory):
    root = tmp_path_factory.mktemp("sqi")
    assert cli(["synth", "--subjects", "8", "--epochs", "240", "--seed", "7", "--artifacts", "--out", str(root / "data")]) == 0
    base = ["losocv", "--data", str(root / "data"), "--cache", str(root / "cache"), "--jobs", str(JOBS), "--set", "all"]
    assert cli(base + ["--out", str(root / "with")]) == 0
    assert cli(base + ["--no-sqi-filter", "--out", str(root / "without")]) == 0
    k_with = _mean(root / "with", "all")["kappa"]
    k_without = _mean(root / "without", "all")["kappa"]
    report("SQI-filter effect", k_with >= k_without,
           f"mean kappa with filter {k_with:.4f} vs without {k_without:.4f}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
