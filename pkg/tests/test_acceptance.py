"""End-to-end acceptance checks, one or more tests per numbered criterion.

Each test carries a ``criterion`` marker; the terminal summary prints one
PASS/FAIL line per criterion (see ``conftest.py``).
"""

import itertools
import json
import time

import numpy as np
import pytest

from conftest import smooth_curve
from topbac.active_contour import EnergyWeights, energy_smooth, energy_smooth_gradient, evolve, image_force
from topbac.cli import main
from topbac.contour import Contour, circle
from topbac.density import GRID_SIZE, ValueDensity
from topbac.eval_metrics import evaluate, hamming, hausdorff, jaccard_distance, pm
from topbac.image_core import GrayImage
from topbac.pipeline import TopInitWarning, kmeans_baseline, top_bac
from topbac.shape_elastic import (
    elastic_distance,
    exp_map,
    fit_prior,
    inner,
    inv_exp_map,
    parallel_transport,
    prior_energy,
    prior_update_direction,
    to_srvf,
)
from topbac.synth import NoiseSpec, apply_noise, figure5_scene, make_donut
from topbac.topo_segment import extract_contours, mean_shift_trajectory, segment

criterion = pytest.mark.criterion


def _run(*args):
    return main([str(a) for a in args])


# -- 1, 2: donut ------------------------------------------------------------------------

@criterion(1, "donut topology recovery: 2 TOP contours, TOP+BAC converges cleanly in < 60 s")
def test_donut_topology(donut_result):
    assert donut_result.n_candidates == 2
    assert len(donut_result.final) == 2
    for s in donut_result.states:
        assert s.converged and s.stop_reason == "tolerance" and s.iteration <= 500
        assert not s.self_intersecting
    assert donut_result.elapsed < 60


@criterion(2, "donut metric bands: d_J <= 0.15, PM <= 0.17, outer ESD <= 0.10, inner ESD <= 0.15")
def test_donut_metric_bands(donut_result, blurred_donut):
    img, truth = blurred_donut
    rep = evaluate(donut_result.final, truth, img.width, img.height)
    assert rep.jaccard_distance <= 0.15
    assert rep.pm <= 0.17
    outer, inner_esd = rep.esd
    assert outer <= 0.10 and inner_esd <= 0.15
    assert rep.hamming < 0.05


# -- 3, 10: bone via the CLI ----------------------------------------------------------------

@pytest.fixture(scope="module")
def bone_runs(tmp_path_factory):
    d = tmp_path_factory.mktemp("bone")
    train = d / "train"
    train.mkdir()
    assert _run("generate", "bone", "-o", train / "bone.png") == 0
    cfg = d / "bone.cfg"
    cfg.write_text(
        "# binary image: one-grey-level histogram bins and a small image step\n"
        "kind = histogram\nbandwidth = 0.00392156862745098\n"
        "lambda1 = 0.015\nlambda2 = 0\nk = 1\n"
    )
    common = ("--config", cfg, "--train", train, "--truth", train / "bone_gt0.csv")
    img = train / "bone.png"
    assert _run("segment", img, "--method", "topbac", *common, "--out-dir", d / "topbac") == 0
    assert _run("segment", img, "--method", "bac", "--init", "circle", *common, "--out-dir", d / "bac") == 0
    return d


def _result(path):
    return json.loads((path / "result.json").read_text())


@criterion(3, "initialisation speedup: TOP+BAC needs fewer iterations than BAC from a circle")
def test_bone_initialisation_speedup(bone_runs):
    top = _result(bone_runs / "topbac")
    circ = _result(bone_runs / "bac")
    assert all(c["stop_reason"] == "tolerance" for c in top["contours"] + circ["contours"])
    assert top["total_iterations"] < circ["total_iterations"]
    m = json.loads((bone_runs / "topbac" / "metrics.json").read_text())["topbac"]
    assert m["jaccard_distance"] < 0.05


@criterion(10, "reproducibility: rerunning from run.json gives bit-identical result JSON")
@pytest.mark.parametrize("name", ["topbac", "bac"])
def test_rerun_bone(bone_runs, tmp_path, name):
    assert _run("rerun", bone_runs / name / "run.json", "--out-dir", tmp_path) == 0
    assert (tmp_path / "result.json").read_bytes() == (bone_runs / name / "result.json").read_bytes()


@criterion(10, "reproducibility: rerunning from run.json gives bit-identical result JSON")
def test_rerun_generate_kmeans_top_eval(tmp_path):
    a = tmp_path / "a"
    assert _run("generate", "blobs", "--figure5", "--width", 128, "--height", 128, "-o", a / "f5.png") == 0
    img = a / "f5.png"
    truth = sorted(a.glob("f5_gt*.csv"))
    assert _run("segment", img, "--method", "kmeans", "--k", 3, "--out-dir", a / "km") == 0
    assert _run("segment", img, "--method", "top", "--out-dir", a / "top") == 0
    assert _run("eval", "--estimate", a / "km" / "result.json", "--estimate", a / "top" / "result.json",
                "--name", "kmeans", "--name", "top", "--truth", *truth, "--image", img, "--out-dir", a / "ev") == 0
    b = tmp_path / "b"
    assert _run("rerun", a / "f5.run.json", "--out-dir", b) == 0
    assert (b / "f5.png").read_bytes() == img.read_bytes()
    for sub, name in (("km", "result.json"), ("top", "result.json"), ("ev", "metrics.json")):
        assert _run("rerun", a / sub / "run.json", "--out-dir", b / sub) == 0
        assert (b / sub / name).read_bytes() == (a / sub / name).read_bytes()


# -- 4: k-means counterexample -----------------------------------------------------------

def _exhaustive_kmeans(values, weights, k):
    best = None
    for cuts in itertools.combinations(range(1, len(values)), k - 1):
        groups = np.split(np.arange(len(values)), cuts)
        sse = sum(np.sum(weights[g] * (values[g] - np.average(values[g], weights=weights[g])) ** 2) for g in groups)
        if best is None or sse < best[0]:
            best = (sse, [set(values[g].tolist()) for g in groups])
    return best[1]


@criterion(4, "k-means counterexample: k in {2,3,4} misses the 6 contours, TOP finds them")
def test_figure5_kmeans_vs_top():
    img, truth = figure5_scene()
    vals, counts = np.unique(img.values, return_counts=True)
    assert len(vals) <= 6 and len(truth) == 6
    for k in (2, 3, 4):
        labels, contours = kmeans_baseline(img, k)
        assert len(contours) != 6
        clusters = [set(np.unique(img.values[labels == j]).tolist()) for j in np.unique(labels)]
        oracle = _exhaustive_kmeans(vals, counts.astype(float), k)
        assert sorted(map(sorted, clusters)) == sorted(map(sorted, oracle))
        if k in (3, 4):
            # the dim dot shares the background cluster
            assert any({0.0, 0.08} <= c for c in oracle)
    labels, _, _ = segment(img, 3, 5, 5)
    contours = extract_contours(labels)
    assert len(contours) == 6
    rep = evaluate(contours, truth, img.width, img.height)
    assert rep.jaccard_distance < 0.05


# -- 5: salt and pepper ---------------------------------------------------------------------

@criterion(5, "salt-and-pepper 0.3: TOP output unusable and top_bac warns")
def test_salt_pepper_failure_mode():
    img, gt = make_donut(256, 256, 70, 30)
    noisy, _ = apply_noise(img, gt, NoiseSpec("salt_pepper", sp_density=0.3, seed=7))
    with pytest.warns(TopInitWarning, match="unusable"):
        res = top_bac(noisy, k=1, max_iter=1)
    largest = res.initial[0].area / (256 * 256)
    assert res.n_candidates > 20 or largest < 0.05
    assert any("unusable" in w for w in res.warnings)


# -- 6: elastic geometry -------------------------------------------------------------------

@criterion(6, "elastic geometry: invariances, sphere identities, prior zero and descent, < 120 s")
def test_elastic_geometry_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    for _ in range(50):
        c = smooth_curve(rng, 200, amp=0.3, radius=20, center=(40, 40))
        moved = [
            c.rotated(rng.uniform(0, 2 * np.pi)),
            c.translated(rng.uniform(-30, 30, 2)),
            c.scaled(rng.uniform(0.3, 3)),
            c.shifted(int(rng.integers(1, 200))),
        ]
        for m in moved:
            assert elastic_distance(c, m) < 1e-5
    for _ in range(10):
        p = to_srvf(smooth_curve(rng, 200, amp=0.3))
        q = to_srvf(smooth_curve(rng, 200, amp=0.3))
        assert np.allclose(exp_map(p, inv_exp_map(p, q)).samples, q.samples, atol=1e-8)
        u = inv_exp_map(p, to_srvf(smooth_curve(rng, 200, amp=0.3)))
        v = inv_exp_map(p, to_srvf(smooth_curve(rng, 200, amp=0.3)))
        tu, tv = parallel_transport(u, p, q), parallel_transport(v, p, q)
        assert abs(inner(tu, tv) - inner(u, v)) < 1e-8
        assert abs(inner(tu, tu) - inner(u, u)) < 1e-8
    train = [smooth_curve(rng, 200, amp=0.25, radius=30, center=(60, 60)) for _ in range(8)]
    prior = fit_prior(train)
    assert prior_energy(prior, prior.mean_curve) < 1e-6
    c = smooth_curve(rng, 200, amp=0.3, radius=25, center=(50, 55))
    e0 = prior_energy(prior, c)
    upd = prior_update_direction(prior, c)
    assert prior_energy(prior, Contour(c.points - 1e-4 * upd.direction, orient=False)) < e0
    assert time.perf_counter() - t0 < 120


# -- 7: gradient checks ---------------------------------------------------------------------

def _linear_density(a, b):
    g = np.linspace(0, 1, GRID_SIZE)
    d = a + b * g
    return ValueDensity(0.05, g, d / np.trapezoid(d, g), "gaussian_kde")


@criterion(7, "gradient checks: smooth gradient vs finite differences, sign rule, circularity")
def test_gradient_checks():
    rng = np.random.default_rng(5)
    c = smooth_curve(rng, 200, amp=0.2, radius=20).resample(200).resample(200)
    g = energy_smooth_gradient(c)
    fd = np.zeros_like(g)
    h = 1e-5
    for i in range(c.n):
        for k in range(2):
            p, m = c.points.copy(), c.points.copy()
            p[i, k] += h
            m[i, k] -= h
            fd[i, k] = (energy_smooth(Contour(p, orient=False)) - energy_smooth(Contour(m, orient=False))) / (2 * h)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 0.05

    bright, dark = _linear_density(0.1, 2.0), _linear_density(2.1, -2.0)
    img = GrayImage(np.full((40, 40), 0.2))
    ring = circle((20, 20), 8, 60)
    # pixels look like exterior (p_int < p_ext): points move inward
    f = image_force(img, ring, bright, dark)
    assert np.all(np.sum(f * ring.outward_normals(), axis=1) < 0)

    res = evolve(GrayImage(np.zeros((128, 128))), circle((64, 64), 40, 200), None, None,
                 weights=EnergyWeights(0.0, 0.3, 0.0), tol=0.0, max_iter=50)
    pts = res.contour.points
    # least-squares circle fit: x^2 + y^2 = 2 a x + 2 b y + c
    A = np.column_stack([2 * pts, np.ones(len(pts))])
    sol, *_ = np.linalg.lstsq(A, np.sum(pts**2, axis=1), rcond=None)
    r = np.sqrt(sol[2] + sol[0] ** 2 + sol[1] ** 2)
    rms = np.sqrt(np.mean((np.linalg.norm(pts - sol[:2], axis=1) - r) ** 2))
    assert rms < 0.01 * r and r < 40


# -- 8: metric oracles ------------------------------------------------------------------------

@criterion(8, "metric oracles: brute force agreement on 100 random region pairs, PM == d_J")
def test_metric_oracles():
    rng = np.random.default_rng(8)
    for _ in range(100):
        h, w = rng.integers(2, 17, 2)
        a = rng.random((h, w)) < rng.uniform(0.1, 0.6)
        b = rng.random((h, w)) < rng.uniform(0.1, 0.6)
        a[rng.integers(h), rng.integers(w)] = True
        b[rng.integers(h), rng.integers(w)] = True
        pa, pb = np.argwhere(a), np.argwhere(b)
        d = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1))
        assert hausdorff(a, b) == max(d.min(1).max(), d.min(0).max())
        tp = sum(1 for y in range(h) for x in range(w) if a[y, x] and b[y, x])
        fp = sum(1 for y in range(h) for x in range(w) if a[y, x] and not b[y, x])
        fn = sum(1 for y in range(h) for x in range(w) if b[y, x] and not a[y, x])
        assert hamming(a, b) == (fp + fn + fn + fp) / (2 * h * w)
        assert jaccard_distance(a, b) == 1 - tp / (tp + fp + fn)
        assert pm(a, b) == jaccard_distance(a, b)


# -- 9: mean shift ----------------------------------------------------------------------------

@criterion(9, "mean shift: ascent along trajectories, coarsening in T, deterministic labels")
def test_mean_shift_properties():
    from scipy import ndimage

    base, _ = make_donut(64, 64, 24, 10)
    img = GrayImage(ndimage.gaussian_filter(base.values, 3))
    rng = np.random.default_rng(9)
    for x, y in rng.integers(0, 64, (40, 2)):
        _, dens = mean_shift_trajectory(img, (int(x), int(y)), 3, 5)
        assert np.all(np.diff(dens) >= -1e-9)
    lab, _, hier = segment(img, 3, 5, 0)
    maps = [segment(img, 3, 5, t, hierarchy=hier)[0] for t in (0, 1, 3, 5, 10, 50, 1e9)]
    for fine, coarse in zip(maps, maps[1:]):
        for lbl in np.unique(fine):
            assert len(np.unique(coarse[fine == lbl])) == 1
    assert maps[-1].max() == 0
    again, _, _ = segment(img, 3, 5, 0)
    assert np.array_equal(lab, again)
