import csv
import math
from dataclasses import replace

import numpy as np
import pytest

from stfuse import prox
from stfuse.guide import DirectionalWeights, weights_from_reference
from stfuse.metrics import psnr
from stfuse.operators import SensorModel, blur_downsample, diff_forward
from stfuse.simulate import make_synthetic_scene
from stfuse.solver import (
    TRACE_COLUMNS,
    FusionParams,
    FusionProblem,
    SolverDivergence,
    SolverState,
    compute_stepsizes,
    derive_parameters,
    init_state,
    iterate,
    max_constraint_violation,
    residuals,
    solve,
    update_alpha,
)

from oracles import dense_diff, dense_sb, dense_step, pixel_groups


# -- parameters ---------------------------------------------------------------

def test_defaults():
    p = FusionParams()
    assert (p.delta, p.k_zero, p.c_alpha, p.lam, p.q_norm) == (0.1, 2, 5.0, 1.0, "l12")
    assert (p.max_iter, p.tol_rel) == (10000, 1e-5)


def test_params_from_dict_accepts_both_spellings():
    p = FusionParams.from_dict({"kZero": 3, "lambda": 0.5, "qNorm": "L2", "sigma_h": 0.05})
    assert (p.k_zero, p.lam, p.q_norm, p.sigma_h) == (3, 0.5, "l2", 0.05)
    assert FusionParams.from_dict(p.to_dict()) == p
    with pytest.raises(ValueError):
        FusionParams.from_dict({"gamma": 1})


@pytest.mark.parametrize("bad", [{"r_h": 1.0}, {"sigma_h": -0.1}, {"q_norm": "linf"}, {"k_zero": 0},
                                 {"eps_h": -1.0}])
def test_params_validation(bad):
    with pytest.raises(ValueError):
        FusionParams(**bad)


def test_derive_parameters_noise_free():
    hr = np.random.default_rng(0).uniform(size=(2, 8, 8))
    m = SensorModel.for_image(hr, 4)
    p = derive_parameters(hr, blur_downsample(hr, m), m, FusionParams())
    assert p.eps_h == 0 and p.eta_h == 0 and p.eta_l == 0
    assert p.eps_l == 0.0
    assert p.resolved


def test_derive_parameters_formulas():
    rng = np.random.default_rng(1)
    hr = rng.uniform(size=(6, 64, 64))
    m = SensorModel.for_image(hr, 8)
    lr = rng.uniform(size=(6, 8, 8))
    p = derive_parameters(hr, lr, m, FusionParams(sigma_h=0.05, r_h=0.02, r_l=0.01))
    assert p.eps_h == pytest.approx(0.98 * 0.05 * math.sqrt(4096 * 6 * 0.98), rel=1e-15)
    assert p.eta_h == pytest.approx(0.49 * 4096 * 0.02, rel=1e-15)
    assert p.eta_l == pytest.approx(0.49 * 64 * 0.01, rel=1e-15)
    assert p.eps_l == pytest.approx(np.sqrt(np.sum((lr - blur_downsample(hr, m)) ** 2)), rel=1e-13)
    for b in range(6):
        assert p.beta[b] == pytest.approx(abs(lr[b].mean() - hr[b].mean()), abs=1e-15)


def test_derive_parameters_overrides_win():
    hr = np.zeros((1, 4, 4))
    m = SensorModel.for_image(hr, 2)
    p = derive_parameters(hr, np.ones((1, 2, 2)), m, FusionParams(eps_l=0.3, beta=(0.1,)))
    assert p.eps_l == 0.3 and p.beta == (0.1,)
    with pytest.raises(ValueError):
        derive_parameters(hr, np.ones((1, 2, 2)), m, FusionParams(beta=(0.1, 0.2)))


@pytest.mark.parametrize("w_max,g11", [(0.0, 1 / 2), (0.5, 1 / 10), (1.0, 1 / 34)])
def test_stepsizes(w_max, g11):
    planes = np.zeros((4, 3, 3))
    planes[0, 1, 1] = w_max
    s = compute_stepsizes(DirectionalWeights(planes))
    assert s.gamma1[0] == g11
    assert s.gamma1[1] == 1 / (32 * w_max**2 + 1)
    assert s.gamma1[2:] == (1.0, 1.0, 1.0)
    assert s.gamma2 == (0.2,) * 6
    assert all(g > 0 for g in s.gamma1 + s.gamma2)


def test_update_alpha():
    rng = np.random.default_rng(2)
    hr = rng.uniform(size=(2, 8, 8))
    w = weights_from_reference(hr)
    lr, lt = rng.uniform(size=(2, 2, 2, 2))
    assert update_alpha(hr, w, lr, lr, 5.0, "l12") == 0.0
    assert update_alpha(np.full_like(hr, 0.4), w, lr, lt, 5.0, "l12") == 0.0
    g = diff_forward(hr) * w.planes[:, None]
    edge = np.sqrt((g**2).sum(axis=(0, 1))).sum()
    expected = 5.0 * edge * np.abs(lr - lt).sum() / 4
    assert update_alpha(hr, w, lr, lt, 5.0, "l12") == pytest.approx(expected, rel=1e-13)
    assert update_alpha(hr, w, lr, lt, 2.0, "l1") == pytest.approx(
        2.0 * np.abs(g).sum() * np.abs(lr - lt).sum() / 4, rel=1e-13)


# -- one iteration against the dense transcription -----------------------------

def _toy_problem(seed=3, width=8, height=8, bands=2, s=4, lam=1.3, q="l12"):
    rng = np.random.default_rng(seed)
    hr = rng.uniform(0.2, 0.8, size=(bands, height, width))
    m = SensorModel.for_image(hr, s)
    lr = blur_downsample(hr, m) + 0.02 * rng.standard_normal((bands, height // s, width // s))
    lt = lr + 0.1 * rng.standard_normal(lr.shape)
    params = FusionParams(lam=lam, q_norm=q, beta=tuple(0.01 * (b + 1) for b in range(bands)),
                          eps_h=0.4, eps_l=0.05, eta_h=0.3, eta_l=0.04)
    return FusionProblem(hr, lr, lt, m, params)


def _random_state(problem, seed=4):
    rng = np.random.default_rng(seed)
    hr, lr = problem.hr_ref, problem.lr_ref
    g = (4,) + hr.shape
    return SolverState(
        h_r=hr + 0.1 * rng.standard_normal(hr.shape),
        h_t=hr + 0.2 * rng.standard_normal(hr.shape),
        s_hr=0.05 * rng.standard_normal(hr.shape),
        s_lr=0.02 * rng.standard_normal(lr.shape),
        s_lt=0.02 * rng.standard_normal(lr.shape),
        z1=rng.standard_normal(g), z2=rng.standard_normal(g), z3=rng.standard_normal(g),
        z4=rng.standard_normal(hr.shape), z5=rng.standard_normal(lr.shape),
        z6=rng.standard_normal(lr.shape), alpha=1.0,
    )


def _dense_data(problem, steps):
    m = problem.sensor
    bands, h, w = problem.hr_ref.shape
    n_h, n_l = h * w, m.lr_width * m.lr_height
    p = problem.params
    return dict(
        D=dense_diff(w, h, bands), SB=dense_sb(w, h, bands, m.window),
        Wdiag=np.concatenate([np.tile(problem.weights.planes[k].ravel(), bands) for k in range(4)]),
        groups=pixel_groups(w, h, bands),
        hr_bands=[slice(b * n_h, (b + 1) * n_h) for b in range(bands)],
        lr_bands=[slice(b * n_l, (b + 1) * n_l) for b in range(bands)],
        n_h=n_h, n_l=n_l, gamma1=steps.gamma1, gamma2=steps.gamma2,
        hr_obs=problem.hr_ref.ravel(), lr=problem.lr_ref.ravel(), lt=problem.lr_target.ravel(),
        beta=p.beta, eps_h=p.eps_h, eps_l=p.eps_l, eta_h=p.eta_h, eta_l=p.eta_l,
        c_alpha=p.c_alpha, lam=p.lam,
    )


def _flat(state):
    return dict(hr=state.h_r.ravel(), ht=state.h_t.ravel(), shr=state.s_hr.ravel(),
                slr=state.s_lr.ravel(), slt=state.s_lt.ravel(),
                **{f"z{k}": getattr(state, f"z{k}").ravel() for k in range(1, 7)})


@pytest.mark.parametrize("lam", [1.0, 1.3])
def test_iterate_matches_dense_transcription(lam):
    problem = _toy_problem(lam=lam)
    steps = compute_stepsizes(problem.weights)
    state = _random_state(problem)
    new = iterate(state, problem, steps)
    ref = dense_step({k: v.copy() for k, v in _flat(state).items()}, _dense_data(problem, steps))
    got = _flat(new)
    dev = max(np.max(np.abs(got[k] - ref[k])) for k in got)
    assert dev < 1e-10
    assert abs(new.alpha - ref["alpha"]) < 1e-10 * max(1.0, ref["alpha"])


def test_iterate_leaves_input_untouched():
    problem = _toy_problem()
    state = _random_state(problem)
    before = {k: v.copy() for k, v in state.variables().items()}
    iterate(state, problem, compute_stepsizes(problem.weights))
    for k, v in state.variables().items():
        np.testing.assert_array_equal(v, before[k])


def test_iterate_keeps_band_sums_in_slab():
    problem = _toy_problem()
    new = iterate(_random_state(problem), problem, compute_stepsizes(problem.weights))
    n_h, n_l = problem.n_hr, problem.n_lr
    for b in range(problem.bands):
        lhs = abs(n_h * problem.lr_target[b].sum() / n_l - new.h_t[b].sum())
        assert lhs <= n_h * problem.params.beta[b] + 1e-8


def test_z4_moreau_decomposition():
    problem = _toy_problem()
    steps = compute_stepsizes(problem.weights)
    old = _random_state(problem)
    new = iterate(old, problem, steps)
    g = steps.gamma2[3]
    y = old.z4 + g * ((2 * new.h_r - old.h_r) + (2 * new.s_hr - old.s_hr))
    proj = prox.project_l2_ball(y / g, problem.params.eps_h, problem.hr_ref)
    np.testing.assert_allclose(new.z4 + g * proj, y, atol=1e-13)


def test_fixed_point_on_constant_scene():
    hr = np.full((2, 8, 8), 0.4)
    m = SensorModel.for_image(hr, 4)
    lr = blur_downsample(hr, m)
    problem = FusionProblem(hr, lr, lr.copy(), m, FusionParams())
    problem = replace(problem, params=derive_parameters(hr, lr, m, problem.params))
    state = init_state(problem)
    new = iterate(state, problem, compute_stepsizes(problem.weights))
    for k in ("h_r", "h_t", "s_hr", "s_lr", "s_lt"):
        np.testing.assert_allclose(getattr(new, k), getattr(state, k), atol=1e-12, rtol=0)


@pytest.mark.parametrize("var,bad", [("z5", np.inf), ("z1", np.nan), ("h_t", np.nan), ("s_lt", -np.inf)])
def test_divergence_guard(var, bad):
    problem = _toy_problem()
    state = _random_state(problem)
    getattr(state, var).flat[0] = bad
    with pytest.raises(SolverDivergence) as err:
        iterate(state, problem, compute_stepsizes(problem.weights))
    assert err.value.iteration == 1


def test_iterate_requires_resolved_parameters():
    problem = _toy_problem()
    problem = replace(problem, params=replace(problem.params, eps_h=None))
    with pytest.raises(ValueError):
        iterate(_random_state(problem), problem, compute_stepsizes(problem.weights))


def test_problem_shape_checks():
    hr = np.zeros((2, 8, 8))
    m = SensorModel.for_image(hr, 4)
    with pytest.raises(ValueError):
        FusionProblem(hr, np.zeros((2, 2, 2)), np.zeros((1, 2, 2)), m)
    with pytest.raises(ValueError):
        FusionProblem(np.zeros((2, 8, 4)), np.zeros((2, 2, 2)), np.zeros((2, 2, 2)), m)


# -- residuals ----------------------------------------------------------------

def test_residuals_fresh_state():
    hr = np.random.default_rng(5).uniform(size=(2, 8, 8))
    m = SensorModel.for_image(hr, 4)
    lr = blur_downsample(hr, m)
    problem = FusionProblem(hr, lr, lr + 0.1, m)
    problem = replace(problem, params=derive_parameters(hr, lr, m, problem.params))
    r = residuals(init_state(problem), problem)
    assert r["gap_lr_ref"] == 0.0
    assert math.isnan(r["err_hr"])


def test_residuals_of_feasible_state_are_nonpositive():
    problem = _toy_problem()
    p = problem.params
    hr = problem.hr_ref
    state = _random_state(problem)
    state.h_r = hr.copy()
    state.s_hr[:] = 0
    state.s_lr = problem.lr_ref - blur_downsample(hr, problem.sensor)
    state.h_t = hr.copy()
    for b in range(problem.bands):
        state.h_t[b] += problem.lr_target[b].mean() - hr[b].mean()
    state.s_lt = problem.lr_target - blur_downsample(state.h_t, problem.sensor)
    problem = replace(problem, params=replace(
        p, eta_l=float(max(np.abs(state.s_lr).sum(), np.abs(state.s_lt).sum()))))
    state.alpha = 10.0 * prox.l12_norm(np.zeros(1))  # dummy, replaced below
    g = (diff_forward(state.h_r) - diff_forward(state.h_t)) * problem.weights.planes[:, None]
    state.alpha = float(np.sqrt((g**2).sum(axis=(0, 1))).sum())
    r = residuals(state, problem)
    for k in ("gap_tgec", "gap_hr", "gap_lr_ref", "gap_lr_tgt", "gap_s_hr", "gap_s_lr", "gap_s_lt"):
        assert r[k] <= 1e-10, k
    assert np.all(r["gap_slab"] <= 1e-10)
    assert max_constraint_violation(state, problem) <= 1e-10


def test_residuals_match_direct_norms():
    problem = _toy_problem()
    p = problem.params
    m = problem.sensor
    prev = _random_state(problem, seed=6)
    st = _random_state(problem, seed=7)
    r = residuals(st, problem, prev)
    g = (diff_forward(st.h_r) - diff_forward(st.h_t)) * problem.weights.planes[:, None]
    assert r["gap_tgec"] == pytest.approx(np.sqrt((g**2).sum(axis=(0, 1))).sum() - st.alpha, rel=1e-12)
    assert r["gap_hr"] == pytest.approx(np.linalg.norm(problem.hr_ref - st.h_r - st.s_hr) - p.eps_h, rel=1e-12)
    assert r["gap_lr_tgt"] == pytest.approx(
        np.linalg.norm(problem.lr_target - blur_downsample(st.h_t, m) - st.s_lt) - p.eps_l, rel=1e-12)
    assert r["gap_s_hr"] == pytest.approx(np.abs(st.s_hr).sum() - p.eta_h, rel=1e-12)
    assert r["err_ht"] == pytest.approx(np.linalg.norm(st.h_t - prev.h_t) / np.linalg.norm(prev.h_t), rel=1e-12)
    slab = np.abs(problem.lr_target.mean(axis=(1, 2)) - st.h_t.mean(axis=(1, 2))) - np.array(p.beta)
    np.testing.assert_allclose(r["gap_slab"], slab, atol=1e-14)


# -- full solves ----------------------------------------------------------------

def test_identical_dates_noise_free_reproduces_reference():
    hr, _ = make_synthetic_scene(64, 64, 3, seed=0)
    m = SensorModel.for_image(hr, 8)
    lr = blur_downsample(hr, m)
    res = solve(FusionProblem(hr, lr, lr.copy(), m))
    # zero fidelity radius pins the reference estimate
    assert np.linalg.norm(hr - res.ref_hr_denoised - res.sparse_hr) <= 1e-6
    assert psnr(res.target_hr, hr) >= 40.0


def test_trace_meets_tolerance_at_convergence():
    ref, tgt = make_synthetic_scene(16, 16, 2, seed=0, n_regions=4)
    m = SensorModel.for_image(ref, 2)
    noisy = ref + 0.05 * np.random.default_rng(0).standard_normal(ref.shape)
    res = solve(FusionProblem(noisy, blur_downsample(ref, m), blur_downsample(tgt, m), m,
                              FusionParams(sigma_h=0.05)))
    assert res.converged
    tr = res.trace
    assert tr["iter"][-1] == res.iterations
    assert tr["err_hr"][-1] < 1e-5 and tr["err_ht"][-1] < 1e-5


def test_trace_csv(tmp_path):
    problem = _toy_problem()
    problem = replace(problem, params=replace(problem.params, max_iter=5))
    res = solve(problem)
    assert res.iterations == 5 and not res.converged
    path = tmp_path / "trace.csv"
    res.write_trace_csv(path)
    rows = list(csv.reader(path.open()))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert [int(r[0]) for r in rows[1:]] == [1, 2, 3, 4, 5]
