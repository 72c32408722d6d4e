import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from topbac.contour import Contour, circle, ellipse
from topbac.shape_elastic import (
    DegenerateShapeError,
    ShapePrior,
    Srvf,
    _energy_w,
    elastic_distance,
    exp_map,
    fit_prior,
    from_srvf,
    inner,
    inv_exp_map,
    karcher_mean,
    parallel_transport,
    prior_energy,
    prior_gradient,
    prior_update_direction,
    register,
    to_srvf,
    unit_circle_srvf,
    unvectorize,
    vectorize,
)
from conftest import smooth_curve

N = 200


def _random_unit(rng, n=N):
    q = rng.normal(size=(n, 2))
    return Srvf(q / np.sqrt(np.mean(np.sum(q * q, axis=1))))


def _tangent(rng, base, scale=1.0):
    v = rng.normal(size=base.samples.shape)
    v = v - inner(v, base) * base.samples
    return scale * v / np.sqrt(inner(v, v))


@pytest.fixture(scope="module")
def prior():
    rng = np.random.default_rng(7)
    train = [smooth_curve(rng, N, amp=0.25, radius=30, center=(60, 60)) for _ in range(8)]
    return fit_prior(train)


# -- SRVF ------------------------------------------------------------------------------

@pytest.mark.parametrize("r", [0.5, 3.0, 40.0])
def test_circle_srvf_has_constant_unit_magnitude(r):
    q = to_srvf(circle((2, -1), r, N))
    assert q.norm == pytest.approx(1.0, abs=1e-8)
    assert np.allclose(np.linalg.norm(q.samples, axis=1), 1.0, atol=1e-6)


def test_srvf_translation_and_scale_invariance(rng):
    c = smooth_curve(rng, N, radius=10)
    q = to_srvf(c).samples
    assert np.allclose(to_srvf(c.translated((5, -7))).samples, q, atol=1e-12)
    assert np.allclose(to_srvf(Contour(c.points * 2.0)).samples, q, atol=1e-12)


def test_circle_integrates_to_closed_curve():
    q = to_srvf(circle((0, 0), 1, N))
    b = from_srvf(q)
    last_step = 0.5 * (q.samples[-1] * np.linalg.norm(q.samples[-1]) + q.samples[0] * np.linalg.norm(q.samples[0])) / N
    gap = np.linalg.norm(b.points[-1] + last_step - b.points[0])
    assert gap < 1e-2 * b.length


def test_round_trip_ellipse_and_random_smooth(rng):
    for c in (ellipse((0, 0), 2, 1, N), smooth_curve(rng, N, amp=0.2, radius=5)):
        q = to_srvf(c)
        back = to_srvf(from_srvf(q))
        rms = np.sqrt(np.mean(np.sum((back.samples - q.samples) ** 2, axis=1)))
        assert rms < 1e-3


def test_zero_srvf_is_degenerate():
    with pytest.raises(DegenerateShapeError):
        from_srvf(Srvf(np.zeros((10, 2))))
    with pytest.raises(DegenerateShapeError):
        Srvf(np.zeros((10, 2))).normalized()


def test_vectorize_is_an_isometry(rng):
    a, b = rng.normal(size=(N, 2)), rng.normal(size=(N, 2))
    assert np.dot(vectorize(a), vectorize(b)) == pytest.approx(inner(a, b), rel=1e-12)
    assert np.allclose(unvectorize(vectorize(a)), a)


# -- registration and distance ---------------------------------------------------------

def test_self_registration_is_identity(rng):
    q = to_srvf(smooth_curve(rng, N))
    reg = register(q, q)
    assert np.allclose(reg.rotation, np.eye(2), atol=1e-9)
    assert np.array_equal(reg.gamma, np.arange(N)) and reg.seed == 0
    assert reg.inner == pytest.approx(1.0, abs=1e-12)


def test_rotation_recovered(rng):
    c = smooth_curve(rng, N)
    q1 = to_srvf(c)
    q2 = to_srvf(c.rotated(np.pi / 2, about=(0, 0)))
    reg = register(q1, q2)
    rot90 = np.array([[0, -1], [1, 0]])
    assert np.allclose(reg.rotation @ rot90, np.eye(2), atol=1e-6)
    assert reg.inner >= 1 - 1e-6


def test_cyclic_shift_seed_recovered(rng):
    c = smooth_curve(rng, N)
    reg = register(to_srvf(c), to_srvf(c.shifted(37)))
    assert reg.seed in (N - 37, 37)
    assert reg.inner >= 1 - 1e-6


def test_distance_identity_and_ellipse_monotonicity():
    c = circle((0, 0), 1, N)
    assert elastic_distance(c, c) < 1e-6
    fat, thin = ellipse((0, 0), 1.1, 1, N), ellipse((0, 0), 2, 1, N)
    d_fat, d_thin = elastic_distance(c, fat), elastic_distance(c, thin)
    assert d_thin > d_fat > 0
    # the same ordering at a denser discretisation
    dense = elastic_distance(c, thin, n=400), elastic_distance(c, fat, n=400)
    assert dense[0] > dense[1] > 0
    assert abs(dense[0] - d_thin) < 0.02


def test_distance_range_and_symmetry(rng):
    a, b = smooth_curve(rng, N, amp=0.3), smooth_curve(rng, N, amp=0.3)
    d = elastic_distance(a, b)
    assert 0 <= d <= np.pi
    assert elastic_distance(b, a) == pytest.approx(d, abs=1e-5)


def test_triangle_inequality(rng):
    for _ in range(4):
        a, b, c = (smooth_curve(rng, N, amp=0.35) for _ in range(3))
        assert elastic_distance(a, c) <= elastic_distance(a, b) + elastic_distance(b, c) + 1e-3


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**31), st.floats(-np.pi, np.pi), st.floats(0.1, 10), st.integers(1, N - 1))
def test_distance_group_invariances(seed, angle, scale, shift):
    rng = np.random.default_rng(seed)
    a, b = smooth_curve(rng, N), smooth_curve(rng, N)
    d = elastic_distance(a, b)
    moved = Contour(b.rotated(angle).points * scale + 11.0).shifted(shift)
    assert elastic_distance(a, moved) == pytest.approx(d, abs=1e-5)
    assert elastic_distance(moved, a) == pytest.approx(d, abs=1e-5)


# -- sphere geometry -------------------------------------------------------------------

def test_exp_map_zero_and_inverse_pair(rng):
    p = _random_unit(rng)
    assert np.array_equal(exp_map(p, np.zeros((N, 2))).samples, p.samples)
    for _ in range(5):
        v = _tangent(rng, p, rng.uniform(0.1, 2.5))
        q = exp_map(p, v)
        back = inv_exp_map(p, q)
        assert np.allclose(back, v, atol=1e-8)
        assert np.allclose(exp_map(p, back).samples, q.samples, atol=1e-8)
        assert np.sqrt(inner(back, back)) == pytest.approx(np.arccos(np.clip(inner(p, q), -1, 1)), abs=1e-10)


def test_inverse_exp_antipodal_error(rng):
    p = _random_unit(rng)
    with pytest.raises(DegenerateShapeError):
        inv_exp_map(p, Srvf(-p.samples))


def test_parallel_transport_identities(rng):
    p = _random_unit(rng)
    v = _tangent(rng, p)
    assert np.allclose(parallel_transport(v, p, p), v, atol=1e-12)
    for _ in range(5):
        q = exp_map(p, _tangent(rng, p, rng.uniform(0.1, 2.0)))
        w = parallel_transport(v, p, q)
        assert abs(inner(w, q)) < 1e-8
        assert np.sqrt(inner(w, w)) == pytest.approx(np.sqrt(inner(v, v)), abs=1e-8)
        assert np.allclose(parallel_transport(w, q, p), v, atol=1e-8)
    flat = parallel_transport(vectorize(v), p, q)
    assert flat.ndim == 1 and np.allclose(unvectorize(flat), parallel_transport(v, p, q))


# -- Karcher mean ----------------------------------------------------------------------

def test_karcher_single_and_identical(rng):
    q = to_srvf(smooth_curve(rng, N))
    r = karcher_mean([q])
    assert np.allclose(r.mean.samples, q.samples, atol=1e-8)
    r = karcher_mean([q, q, q])
    assert np.allclose(r.mean.samples, q.samples, atol=1e-8)
    assert r.iterations == 1 and r.converged


def test_karcher_mean_of_two_perturbed_circles_is_midpoint(rng):
    a = smooth_curve(rng, N, amp=0.08)
    b = smooth_curve(rng, N, amp=0.08)
    r = karcher_mean([to_srvf(a), to_srvf(b)])
    assert abs(r.mean.norm - 1) < 1e-8
    half = elastic_distance(a, b) / 2
    for c in (a, b):
        assert abs(elastic_distance(r.mean, to_srvf(c)) - half) <= 0.1 * half


def test_karcher_needs_shapes():
    with pytest.raises(ValueError):
        karcher_mean([])


# -- prior -----------------------------------------------------------------------------

def test_prior_structure(prior, tmp_path):
    u = prior.basis
    assert u.shape[0] == 2 * N and 1 <= prior.j <= 7
    assert np.allclose(u.T @ u, np.eye(prior.j), atol=1e-8)
    assert np.all(np.diff(prior.eigenvalues) <= 0)
    assert 0 < prior.delta < prior.eigenvalues[-1]
    prior.save(tmp_path / "p.json")
    back = ShapePrior.load(tmp_path / "p.json")
    assert np.array_equal(back.basis, prior.basis) and back.delta == prior.delta


def test_prior_rank_bound(rng):
    train = [smooth_curve(rng, N, amp=0.3) for _ in range(3)]
    p = fit_prior(train, j=10)
    assert p.j <= 2


def test_prior_rejects_degenerate_training(rng):
    c = smooth_curve(rng, N)
    with pytest.raises(ValueError):
        fit_prior([c])
    with pytest.raises(DegenerateShapeError):
        fit_prior([c, c.translated((3, 3)), Contour(c.points * 2)])


def test_prior_energy_zero_at_mean(prior):
    assert prior_energy(prior, prior.mean_curve) < 1e-6
    assert prior_energy(prior, Contour(prior.mean_curve.points * 37 + 5)) < 1e-6


def test_hand_built_prior_energy():
    mean = unit_circle_srvf(N)
    rng = np.random.default_rng(3)
    q, _ = np.linalg.qr(rng.normal(size=(2 * N, 2)))
    p = ShapePrior(mean, q, np.array([0.4, 0.1]), 0.05)
    w = q[:, 0] * np.sqrt(0.4)
    assert _energy_w(p, w) == pytest.approx(0.5, abs=1e-12)
    inside = q @ np.array([0.3, -0.2])
    resid = inside - q @ (q.T @ inside)
    assert np.linalg.norm(resid) < 1e-12


def test_prior_gradient_matches_finite_differences(prior, rng):
    w = rng.normal(scale=0.05, size=2 * N)
    g = prior_gradient(prior, w)
    h = 1e-6
    fd = np.array([(_energy_w(prior, w + h * e) - _energy_w(prior, w - h * e)) / (2 * h)
                   for e in np.eye(2 * N)])
    cos = fd @ g / (np.linalg.norm(fd) * np.linalg.norm(g))
    assert cos > 0.999


def test_update_vanishes_at_mean(prior):
    c = Contour(prior.mean_curve.points * 40 + 60)
    upd = prior_update_direction(prior, c)
    assert np.max(np.linalg.norm(upd.direction, axis=1)) < 1e-3


def test_update_keeps_length_and_centroid(prior, rng):
    c = smooth_curve(rng, N, amp=0.3, radius=25, center=(50, 55))
    upd = prior_update_direction(prior, c)
    assert upd.beta_new.length == pytest.approx(c.length, abs=1e-8)
    assert np.allclose(upd.beta_new.centroid, c.centroid, atol=1e-8)


@pytest.mark.parametrize("eta", [1e-4, 1e-3])
def test_update_is_a_descent_direction(prior, eta):
    rng = np.random.default_rng(11)
    c = smooth_curve(rng, N, amp=0.3, radius=25, center=(50, 55))
    e0 = prior_energy(prior, c)
    upd = prior_update_direction(prior, c)
    moved = Contour(c.points - eta * upd.direction, orient=False)
    assert prior_energy(prior, moved) < e0


def test_update_rejects_bad_eps(prior):
    with pytest.raises(ValueError):
        prior_update_direction(prior, prior.mean_curve, eps=0)
