"""Acceptance suite: one test and one PASS/FAIL line per criterion.

Tolerances are pinned here as module constants. The statistical checks use
fixed seeds, so every run reproduces the same numbers.
"""

import shutil
import time

import numpy as np
import pytest

from condsmooth import (BridgeConstraint, DiffusionSpec, FilterConfig, SmootherConfig, TimeGrid,
                        gaussian_sampler, run_filter, sample_bridge_batch, simulate_batch,
                        simulate_bridges, smooth_conditional)
from condsmooth.harness import ExperimentConfig, cmd_filter, cmd_simulate, cmd_smooth
from condsmooth.harness.studies import SineSettings, ns_desk_run, sine_study, summarize_sine
from condsmooth.models import (SineModel, VorticityGrid, build_precision, curl, divergence,
                               kalman_rts_oracle, ou_model, velocity_from_vorticity)

N_SE = 3.0                       # criteria 3 and 4: standard errors allowed
REJECTION_WINDOW = 0.01          # criterion 3: |x(T) - v| acceptance window
SIGN_LEVEL = 0.05                # criterion 5: one-sided sign test level
LARGE_M_GAP = 0.20               # criterion 5: relative gap at M = 500
COVER_CONDITIONAL = 0.90         # criterion 6: minimum coverage, conditional 20x50
MISS_STANDARD = 0.30             # criterion 6: minimum miss rate, standard N = 20
NS_DROP = 0.80                   # criterion 7
NS_HIDDEN_LE_FILTER = 0.70       # criterion 7
SPECTRAL_TOL = 1e-10             # criterion 8
PRECISION_REL = 0.02             # criterion 9

zero = lambda x: np.zeros_like(x)


def weighted_mean_var_se(x, w):
    """Weighted mean and variance with their delta-method standard errors."""
    w = w / w.sum()
    mu = w @ x
    d2 = (x - mu) ** 2
    var = w @ d2
    return mu, var, np.sqrt(w**2 @ d2), np.sqrt(w**2 @ (d2 - var) ** 2)


def plain_mean_var_se(x):
    n = x.size
    mu, var = x.mean(), x.var()
    m4 = np.mean((x - mu) ** 4)
    return mu, var, np.sqrt(var / n), np.sqrt((m4 - var**2) / n)


# ---- 1, 2: bridge contracts ---------------------------------------------------------

def test_c01_zero_drift_weights_identical(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    spec = DiffusionSpec(3, zero, lambda z: 0.5 * z)
    b = sample_bridge_batch(spec, BridgeConstraint([0.0, 1.0, -1.0], [2.0, 0.0, 3.0], TimeGrid(0, 0.01, 100)),
                            1000, rng)
    ok = bool(np.all(b.log_weights == 0.0) and np.all(b.norm_weights == b.norm_weights[0]))
    dt = time.perf_counter() - t0
    assert criterion(1, "Girsanov identity for zero drift", ok and dt < 1,
                     f"distinct log-weights {np.unique(b.log_weights).size}, {dt:.2f}s")


def test_c02_bridge_endpoint_contract(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    hits, total = 0, 0
    for spec, n in ((SineModel().build().dynamics, 1), (DiffusionSpec.isotropic(4, np.sin, 0.7), 4)):
        u, v = rng.normal(size=(2000, n)), 3 * rng.normal(size=(2000, n))
        paths, _ = simulate_bridges(spec, u, v, TimeGrid(0.3, 0.005, 20), rng)
        hits += int(np.sum(np.all(paths[:, -1] == v, axis=1)))
        total += u.shape[0]
    dt = time.perf_counter() - t0
    assert criterion(2, "bridge endpoint hit exactly", hits == total and dt < 1,
                     f"{hits}/{total} bridges, {dt:.2f}s")


# ---- 3: conditioned OU versus rejection sampling ------------------------------------

@pytest.mark.slow
def test_c03_ou_bridge_matches_rejection_oracle(criterion):
    t0 = time.perf_counter()
    spec = ou_model(theta=1.0, sigma2=1.0).dynamics
    grid = TimeGrid(0.0, 0.01, 100)
    steps = (25, 50, 75)
    rng = np.random.default_rng(3)
    paths, logw = simulate_bridges(spec, np.zeros((100_000, 1)), np.ones((100_000, 1)), grid, rng)
    w = np.exp(logw - logw.max())
    bridge = [weighted_mean_var_se(paths[:, j, 0], w) for j in steps]
    del paths

    accepted = []
    for _ in range(60):
        x = simulate_batch(spec, np.zeros((100_000, 1)), grid, rng)
        keep = np.abs(x[:, -1, 0] - 1.0) < REJECTION_WINDOW
        accepted.append(x[keep][:, steps, 0])
    acc = np.concatenate(accepted)
    oracle = [plain_mean_var_se(acc[:, i]) for i in range(len(steps))]

    z = []
    for (bm, bv, bsm, bsv), (om, ov, osm, osv) in zip(bridge, oracle):
        z.append(abs(bm - om) / np.hypot(bsm, osm))
        z.append(abs(bv - ov) / np.hypot(bsv, osv))
    dt = time.perf_counter() - t0
    ok = max(z) <= N_SE and dt < 120
    assert criterion(3, "conditioned OU vs rejection oracle", ok,
                     f"max |z| {max(z):.2f} over mean/var at t=0.25,0.5,0.75; "
                     f"{acc.shape[0]} accepted paths, {dt:.0f}s")


# ---- 4: Kalman / RTS equivalence ----------------------------------------------------

@pytest.mark.slow
def test_c04_kalman_rts_equivalence(criterion):
    t0 = time.perf_counter()
    model = ou_model(theta=1.0, sigma2=1.0, obs_var=0.1, dt=0.01, stride=20)
    S = model.obs_interval
    m0, P0 = 0.0, 0.5
    rng = np.random.default_rng(4)
    x0 = m0 + np.sqrt(P0) * rng.standard_normal((1, 1))
    truth = simulate_batch(model.dynamics, x0, TimeGrid(0, model.dt, 9 * S), rng)[0]
    y = truth[::S] + np.sqrt(0.1) * rng.standard_normal((10, 1))
    kf = kalman_rts_oracle(model, y, [m0], [[P0]])
    sampler = gaussian_sampler([m0], np.sqrt(P0))
    R = 20

    # bootstrap filter, N = 1e4
    filt = []
    for r in range(R):
        h = run_filter(model, FilterConfig(n_particles=10_000), y, sampler, np.random.default_rng(100 + r))
        filt.append([h.initial.mean[0], *[rec.mean[0] for rec in h.records]])
    filt = np.array(filt)
    z_filter = np.abs(filt.mean(0) - kf.filt_mean[::S, 0]) / (filt.std(0, ddof=1) / np.sqrt(R))

    # conditional smoother, N = 200, M = 100, at window midpoints; the oracle only sees y up to t_{k+1}
    oracle = np.array([kalman_rts_oracle(model, y[:k + 2], [m0], [[P0]]).smooth_mean[k * S + S // 2, 0]
                       for k in range(9)])
    mids = []
    for r in range(R):
        rr = np.random.default_rng(200 + r)
        h = run_filter(model, FilterConfig(n_particles=200), y, sampler, rr)
        mids.append([smooth_conditional(h, k, model, SmootherConfig(M=100), rr).mean[S // 2 - 1, 0]
                     for k in range(9)])
    mids = np.array(mids)
    z_smooth = np.abs(mids.mean(0) - oracle) / (mids.std(0, ddof=1) / np.sqrt(R))
    dt = time.perf_counter() - t0
    ok = z_filter.max() <= N_SE and z_smooth.max() <= N_SE and dt < 300
    assert criterion(4, "Kalman/RTS equivalence", ok,
                     f"filter max |z| {z_filter.max():.2f} (10 obs), smoother max |z| {z_smooth.max():.2f} "
                     f"(9 midpoints), {R} replications, {dt:.0f}s")


# ---- 5, 6: sine study -----------------------------------------------------------------

SINE = SineSettings(n_windows=500, small_n=20, large_n=10_000, bridges=(50, 500))


@pytest.fixture(scope="module")
def sine_results():
    t0 = time.perf_counter()
    reps = sine_study(range(20), SINE)
    return summarize_sine(reps, SINE), time.perf_counter() - t0


@pytest.mark.slow
def test_c05_sine_conditional_beats_standard(criterion, sine_results):
    s, dt = sine_results
    med = s["median_rmse"]
    ok = (s["sign_test_p"] < SIGN_LEVEL and med["conditional_m50"] < med["standard_small"]
          and s["large_m_relative_gap"] <= LARGE_M_GAP and dt < 600)
    assert criterion(5, "sine: conditional vs standard smoothing", ok,
                     f"wins {s['conditional_wins']}/{s['replications']} (p={s['sign_test_p']:.4f}); "
                     f"median RMSE cond20x50 {med['conditional_m50']:.4f} vs std20 {med['standard_small']:.4f}; "
                     f"cond20x500 {med['conditional_m500']:.4f} vs std1e4 {med['standard_large']:.4f} "
                     f"(gap {100 * s['large_m_relative_gap']:.1f}%); {dt:.0f}s")


@pytest.mark.slow
def test_c06_sine_support_coverage(criterion, sine_results):
    s, _ = sine_results
    cov = s["coverage"]
    dumped = all(k in cov for k in SINE.labels())
    ok = dumped and cov["conditional_m50"] >= COVER_CONDITIONAL and 1 - cov["standard_small"] >= MISS_STANDARD
    assert criterion(6, "sine: mid-window support coverage", ok,
                     "coverage " + ", ".join(f"{k} {v:.2f}" for k, v in cov.items())
                     + "; median support sizes " + ", ".join(f"{k} {v:.0f}" for k, v in s["median_support_size"].items()))


# ---- 7: Navier-Stokes desk scale -----------------------------------------------------

@pytest.mark.slow
def test_c07_navier_stokes_desk_scale(criterion):
    t0 = time.perf_counter()
    _, _, s = ns_desk_run(seed=1, n_particles=100, M=50, n_windows=10, grid=32)
    dt = time.perf_counter() - t0
    f, st, c = s["filter"], s["standard"], s["conditional"]
    checks = {
        "drop": f["mse_drop_fraction"] >= NS_DROP,
        "hidden": c["fraction_hidden_le_filter"] >= NS_HIDDEN_LE_FILTER,
        "jump": c["median_jump"] < f["median_jump"] and c["median_jump"] < st["median_jump"],
        "time": dt < 1800,
    }
    assert criterion(7, "Navier-Stokes desk scale", all(checks.values()),
                     f"filter MSE drop at {f['mse_drop_fraction']:.2f} of obs; conditional <= filter at "
                     f"{c['fraction_hidden_le_filter']:.2f} of hidden times; median jump cond "
                     f"{c['median_jump']:.3f} / filter {f['median_jump']:.3f} / std {st['median_jump']:.3f}; "
                     f"failed: {[k for k, v in checks.items() if not v] or 'none'}; {dt:.0f}s")


# ---- 8: spectral identities ----------------------------------------------------------

def test_c08_spectral_identities(criterion):
    t0 = time.perf_counter()
    grid = VorticityGrid()
    op = grid.ops
    rng = np.random.default_rng(8)
    shape = (100, *op.k2.shape)
    # every mode the solver can represent: no mean, no Nyquist lines
    xi = op.ifft((rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * op.resolved) * grid.n
    w = velocity_from_vorticity(xi, grid)
    div_err = float(np.abs(divergence(w, grid)).max())
    curl_err = float(np.abs(curl(w, grid) - xi).max() / np.abs(xi).max())
    dt = time.perf_counter() - t0
    ok = div_err <= SPECTRAL_TOL and curl_err <= SPECTRAL_TOL and dt < 10
    assert criterion(8, "spectral identities", ok,
                     f"max |div w| {div_err:.1e}, relative curl round trip {curl_err:.1e} on 100 fields, {dt:.2f}s")


# ---- 9: empirical precision ------------------------------------------------------

def test_c09_empirical_precision(criterion):
    t0 = time.perf_counter()
    s = 0.7
    P = build_precision(np.random.default_rng(9).normal(scale=s, size=(10_000, 1)))
    scalar = float(P(np.array([[1.0]]))[0, 0])
    rel = abs(scalar * s**2 - 1)
    # M = 8 samples +-scale_i e_i: sample covariance diag(scale_i^2 / 4), precision diag(4 / scale_i^2)
    scales = np.array([2.0, 1.0, 4.0, 0.5])
    Z = np.concatenate([np.diag(scales), -np.diag(scales)])
    P4 = build_precision(Z)
    hand = np.diag(4 / scales**2)
    dense = P4(np.eye(4))
    exact = P4.rank == 4 and np.allclose(dense, hand, rtol=1e-13, atol=1e-13)
    dt = time.perf_counter() - t0
    ok = rel <= PRECISION_REL and exact and dt < 10
    assert criterion(9, "empirical precision", ok,
                     f"scalar relative error {100 * rel:.2f}%, n=4 max error {np.abs(dense - hand).max():.1e}")


# ---- 10: reproducibility -------------------------------------------------------------

def _tree(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def _smoke(root):
    sine = ExperimentConfig(model="sine", n_windows=20, seed=5, out=str(root / "sine"),
                            filter={"n_particles": 50}, smoother={"M": 20}, support_windows=[3])
    ns = ExperimentConfig(model="ns", n_windows=1, seed=5, out=str(root / "ns"),
                          filter={"n_particles": 8}, smoother={"M": 3}, support_windows=[0])
    for cfg in (sine, ns):
        cmd_simulate(cfg)
        cmd_filter(cfg)
        for method in ("standard", "conditional"):
            cmd_smooth(cfg, method)
    return _tree(root)


def test_c10_bitwise_reproducible_runs(criterion, tmp_path):
    # the run directory is echoed into config.json, so both runs use the same one
    t0 = time.perf_counter()
    a = _smoke(tmp_path / "run")
    shutil.rmtree(tmp_path / "run")
    b = _smoke(tmp_path / "run")
    same = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    dt = time.perf_counter() - t0
    assert criterion(10, "bitwise reproducible output trees", same and dt < 60,
                     f"{len(a)} files compared, {dt:.1f}s")
