import numpy as np
import pytest
from hypothesis import given, strategies as st

from condsmooth import ConfigError, DegeneratePrecision, TimeGrid, simulate_batch
from condsmooth.models import (GRFOperator, GRFSpec, NSModel, SineModel, VorticityGrid,
                               build_precision, covariance_spectrum, curl, divergence,
                               initial_vorticity, kalman_rts_oracle, make_linear_gaussian,
                               ns_drift, ou_model, project_resolved, sample_grf,
                               velocity_from_vorticity)
from condsmooth.models.grf import periodic_sq_distance
from condsmooth.models.navier_stokes import cfl_number


def band_limited(grid, rng, size):
    """Random fields with independent coefficients on every resolvable mode."""
    op = grid.ops
    shape = (size, *op.k2.shape)
    coef = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * op.resolved
    return op.ifft(coef) * grid.n


# ---- linear-Gaussian oracle --------------------------------------------------

def brute_force_posterior(model, y, m0, P0, J):
    """Condition the joint Gaussian of the Euler chain on the observations directly."""
    p = model.params
    F = np.eye(1) + p["A"] * model.dt
    Qd = p["Q"] * model.dt
    mean = np.zeros(J)
    cov = np.zeros((J, J))
    mean[0], cov[0, 0] = m0, P0
    for j in range(1, J):
        mean[j] = F[0, 0] * mean[j - 1]
        cov[j, :j] = F[0, 0] * cov[j - 1, :j]
        cov[:j, j] = cov[j, :j]
        cov[j, j] = F[0, 0] ** 2 * cov[j - 1, j - 1] + Qd[0, 0]
    idx = np.arange(len(y)) * model.obs_interval
    S = cov[np.ix_(idx, idx)] + p["R"][0, 0] * np.eye(len(y))
    G = np.linalg.solve(S, cov[idx]).T
    return mean + G @ (y[:, 0] - mean[idx]), cov - G @ cov[idx]


def test_kalman_rts_matches_joint_conditioning():
    m = ou_model(theta=0.7, sigma2=0.8, obs_var=0.2, dt=0.05, stride=3)
    y = np.array([[0.3], [-0.2], [0.9], [0.4]])
    kf = kalman_rts_oracle(m, y, [0.1], [[0.5]])
    mu, cov = brute_force_posterior(m, y, 0.1, 0.5, 10)
    np.testing.assert_allclose(kf.smooth_mean[:, 0], mu, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(kf.smooth_cov[:, 0, 0], np.diag(cov), rtol=1e-10)
    # the filter at the last point is the smoother there
    assert kf.filt_mean[-1, 0] == pytest.approx(mu[-1], rel=1e-10)


def test_linear_model_validation():
    with pytest.raises(ConfigError):
        make_linear_gaussian([[1.0]], [[1.0]], [[-1.0]], [[1.0]], 0.1, 2)
    with pytest.raises(ConfigError):
        kalman_rts_oracle(SineModel().build(), np.zeros((2, 1)), [0.0], [[1.0]])


# ---- GRF ---------------------------------------------------------------------

def test_spectrum_equals_dense_circulant_eigenvalues():
    spec, shape = GRFSpec(0.5, 2.0), (6, 8)
    ys, xs = np.meshgrid(np.arange(6), np.arange(8), indexing="ij")
    pts = np.c_[ys.ravel(), xs.ravel()]
    d = np.abs(pts[:, None, :] - pts[None, :, :])
    d = np.minimum(d, np.array(shape) - d)
    C = spec.covariance((d**2).sum(-1))
    eig, lost = covariance_spectrum(spec, shape)
    np.testing.assert_allclose(np.sort(eig.ravel()), np.sort(np.linalg.eigvalsh(C)), atol=1e-12)
    assert lost == 0


def test_operator_is_symmetric_square_root():
    op = GRFOperator(GRFSpec(0.3, 2.0), (8, 8))
    E = op(np.eye(64))            # rows are C^{1/2} e_i
    d = periodic_sq_distance(8, 8)
    ys, xs = np.divmod(np.arange(64), 8)
    dy = np.minimum(np.abs(ys[:, None] - ys), 8 - np.abs(ys[:, None] - ys))
    dx = np.minimum(np.abs(xs[:, None] - xs), 8 - np.abs(xs[:, None] - xs))
    np.testing.assert_allclose(E @ E.T, 0.3 * np.exp(-(dy**2 + dx**2) / 2.0), atol=1e-12)
    assert d[0, 0] == 0


def test_zero_eta_gives_zero_field(rng):
    assert np.all(sample_grf(GRFSpec(0.0, 13.0), (16, 16), rng) == 0)


def test_clipping_rejects_unresolvable_covariance():
    with pytest.raises(ConfigError, match="clipped"):
        covariance_spectrum(GRFSpec(1.0, 400.0), (32, 32))


def test_grf_point_variance_and_correlation(rng):
    spec = GRFSpec()
    f = sample_grf(spec, (32, 32), rng, size=10_000)
    v = f[:, 5, 7]
    se = np.sqrt(2 / 10_000) * spec.eta
    assert abs(v.var() - spec.eta) < 3 * se
    for d in (1, 3, 6):
        r = np.corrcoef(f[:, 5, 7], f[:, 5, (7 + d) % 32])[0, 1]
        assert abs(r - np.exp(-d * d / spec.lam)) < 0.05


# ---- empirical precision -----------------------------------------------------

def test_precision_scalar_case(rng):
    s = 0.7
    P = build_precision(rng.normal(scale=s, size=(10_000, 1)))
    assert P(np.array([[1.0]]))[0, 0] == pytest.approx(1 / s**2, rel=0.02)


def test_precision_orthogonal_samples_hand_case():
    # two orthogonal samples of norm sqrt(2): Z Z^T / M is the projector onto their span
    Z = np.array([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, -1.0]])
    P = build_precision(Z)
    assert P.rank == 2
    span = np.array([[0.3, 0.3, -1.2, 1.2], [1.0, 1.0, 0.0, 0.0]])
    np.testing.assert_allclose(P(span), span, atol=1e-14)
    np.testing.assert_allclose(P(np.array([1.0, -1.0, 1.0, 1.0])), 0.0, atol=1e-14)


def test_precision_inverts_sample_covariance_on_span(rng):
    Z = rng.normal(size=(30, 10))
    P = build_precision(Z)
    C = Z.T @ Z / 30
    v = rng.normal(size=10)
    np.testing.assert_allclose(P(C @ v), v, rtol=1e-8)


def test_precision_errors():
    with pytest.raises(ConfigError):
        build_precision(np.ones((1, 3)))
    with pytest.raises(DegeneratePrecision):
        build_precision(np.zeros((4, 3)))


# ---- Navier-Stokes -----------------------------------------------------------

def test_grid_validation():
    for bad in (dict(nx=30), dict(ny=2), dict(spacing=0.0)):
        with pytest.raises(ConfigError):
            VorticityGrid(**bad)


def test_velocity_of_zero_is_zero():
    g = VorticityGrid(16, 16)
    assert np.all(velocity_from_vorticity(np.zeros(g.n), g) == 0)


def test_constant_vorticity_has_zero_drift():
    g = VorticityGrid(16, 16)
    assert np.all(np.abs(ns_drift(np.full(g.shape, 0.7), g, nu=0.1, drag=0.0)) < 1e-14)


@pytest.mark.parametrize("drag", [0.0, 0.25])
def test_shear_mode_is_an_eigenfunction(drag):
    g = VorticityGrid(32, 16, spacing=0.5)
    x, _ = g.coords()
    k = 2 * np.pi / g.length[0]
    xi = np.sin(k * x)
    out = ns_drift(xi, g, nu=0.05, drag=drag)
    np.testing.assert_allclose(out, -(0.05 * k**2 + drag) * xi, atol=1e-12)


def test_velocity_of_single_mode_by_hand():
    g = VorticityGrid(16, 16)
    x, y = g.coords()
    k = 2 * np.pi / 16
    w = velocity_from_vorticity(np.cos(k * y), g)
    # psi = cos(ky) / k^2, w = (d psi / dy, -d psi / dx) = (-sin(ky) / k, 0)
    np.testing.assert_allclose(w[0], -np.sin(k * y) / k, atol=1e-12)
    np.testing.assert_allclose(w[1], 0.0, atol=1e-12)


@given(seed=st.integers(0, 2**32 - 1), n=st.sampled_from([8, 16, 32]))
def test_divergence_free_and_round_trip(seed, n):
    g = VorticityGrid(n, n)
    xi = band_limited(g, np.random.default_rng(seed), 3)
    w = velocity_from_vorticity(xi, g)
    assert np.abs(divergence(w, g)).max() < 1e-10
    assert np.abs(curl(w, g) - (xi - xi.mean(axis=(-2, -1), keepdims=True))).max() < 1e-10


def test_round_trip_on_arbitrary_fields_recovers_resolved_part(rng):
    g = VorticityGrid(16, 16)
    xi = rng.normal(size=(4, g.n))
    w = velocity_from_vorticity(xi, g)
    assert w.shape == (4, 2 * g.n)
    np.testing.assert_allclose(curl(w, g), project_resolved(xi, g), atol=1e-12)
    assert np.abs(divergence(w, g)).max() < 1e-12


def test_ns_model_build_and_cfl(rng):
    ns = NSModel(VorticityGrid(32, 32))
    m = ns.build()
    assert m.dim == 1024 and m.obs_interval == 100 and m.dt == 0.1
    xi = initial_vorticity(ns.grid, rng, amplitude=0.3)
    assert xi.mean() == pytest.approx(0.0, abs=1e-14)
    assert np.sqrt(np.mean(xi**2)) == pytest.approx(0.3)
    assert 0 < ns.cfl(xi) == cfl_number(xi, ns.grid, 0.1) < 1
    P = ns.precision_factory(rng, 50)
    assert P.rank == 50
    with pytest.raises(ConfigError):
        NSModel(nu=0.0)


def test_desk_scale_run_stays_bounded(rng):
    ns = NSModel(VorticityGrid(32, 32))
    m = ns.build()
    x0 = np.stack([initial_vorticity(ns.grid, rng, amplitude=0.3) for _ in range(4)])
    end = simulate_batch(m.dynamics, x0, TimeGrid(0, 0.1, 300), rng, keep_path=False)
    assert np.all(np.isfinite(end)) and np.sqrt(np.mean(end**2)) < 1.0
