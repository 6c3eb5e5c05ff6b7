import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from smoothopt.cohesive import (ChainModel, ChainObjective, CohesiveParams, LoadSchedule,
                                SimulationHistory, block_design_map, calibrate_k_bend,
                                cohesive_potential, cohesive_potential_normal, cohesive_traction,
                                energy_gradient, mechanical_work, reaction_force,
                                reference_model, rigid_stiffness, simulate, solve_time_step,
                                total_energy)
from smoothopt.objectives import EvaluationError

from oracles import exact_rigid_ratio

PARAM_SETS = [CohesiveParams(), CohesiveParams(phi_s=2e-5, r=0.5),
              CohesiveParams(phi_s=0.0, r=-1.0), CohesiveParams(phi_s=5e-5, r=2.0,
                                                                delta_s_star=3e-4)]


def _literal_potential(dn, ds, p):
    """High-precision evaluation of the exponential potential as written."""
    with mp.workdps(50):
        q = mp.mpf(p.phi_s) / p.phi_n
        r = mp.mpf(p.r)
        D = mp.mpf(dn) / p.delta_n_star
        E = mp.exp(-(mp.mpf(ds) / p.delta_s_star) ** 2)
        A = (1 - r + D) * (1 - q) / (r - 1)
        B = q + (r - q) / (r - 1) * D
        return p.phi_n + p.phi_n * mp.exp(-D) * (A - B * E)


@pytest.mark.parametrize("p", PARAM_SETS)
def test_potential_zero_at_origin(p):
    assert cohesive_potential(0.0, 0.0, p) == 0.0


@pytest.mark.parametrize("p", PARAM_SETS)
def test_potential_matches_literal_formula(p):
    grid = np.linspace(0, 5, 21)
    for dn in grid * p.delta_n_star:
        for ds in grid * p.delta_s_star:
            ref = _literal_potential(dn, ds, p)
            got = cohesive_potential(dn, ds, p)
            assert abs(got - float(ref)) <= 1e-13 * abs(float(ref)) + 1e-300


@pytest.mark.parametrize("p", PARAM_SETS)
def test_normal_closed_form(p):
    for D in np.linspace(0, 10, 201):
        with mp.workdps(50):
            ref = float(p.phi_n * (1 - (1 + mp.mpf(D)) * mp.exp(-mp.mpf(D))))
        got = cohesive_potential(D * p.delta_n_star, 0.0, p)
        closed = cohesive_potential_normal(D * p.delta_n_star, p)
        assert abs(got - ref) <= 1e-12 * abs(ref) + 1e-300
        assert abs(closed - ref) <= 1e-12 * abs(ref) + 1e-300


@pytest.mark.parametrize("p", PARAM_SETS)
def test_potential_limits(p):
    assert cohesive_potential(0.0, 50 * p.delta_s_star, p) == pytest.approx(p.phi_s, abs=1e-20)
    assert cohesive_potential(60 * p.delta_n_star, 0.0, p) == pytest.approx(p.phi_n, rel=1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        CohesiveParams(r=1.0)
    with pytest.raises(ValueError):
        CohesiveParams(phi_n=0.0)
    with pytest.raises(ValueError):
        CohesiveParams(delta_n_star=0.0)
    assert CohesiveParams().q == pytest.approx(1.166e-5 / 2.718e-5)


def test_traction_zero_at_origin():
    for p in PARAM_SETS:
        Tn, Ts = cohesive_traction(0.0, 0.0, p)
        assert abs(Tn) <= 1e-12 * p.phi_n / p.delta_n_star and Ts == 0.0


def test_peak_normal_traction():
    p = CohesiveParams()
    res = minimize_scalar(lambda x: -cohesive_traction(x, 0.0, p)[0],
                          bounds=(0, 5 * p.delta_n_star), method="bounded",
                          options={"xatol": 1e-12})
    peak = -res.fun
    assert peak == pytest.approx(p.phi_n / (math.e * p.delta_n_star), rel=1e-4)
    assert peak == pytest.approx(0.09999, rel=1e-4)
    assert res.x == pytest.approx(p.delta_n_star, rel=1e-3)


@pytest.mark.parametrize("p", PARAM_SETS)
def test_traction_is_potential_gradient(p):
    hn, hs = 1e-6 * p.delta_n_star, 1e-6 * p.delta_s_star
    scale_n = p.phi_n / p.delta_n_star
    scale_s = max(p.phi_n, p.phi_s) / p.delta_s_star
    for dn in np.linspace(0, 5, 11) * p.delta_n_star:
        for ds in np.linspace(0, 5, 11) * p.delta_s_star:
            Tn, Ts = cohesive_traction(dn, ds, p)
            fn = (cohesive_potential(dn + hn, ds, p) - cohesive_potential(dn - hn, ds, p)) / (2 * hn)
            fs = (cohesive_potential(dn, ds + hs, p) - cohesive_potential(dn, ds - hs, p)) / (2 * hs)
            assert abs(Tn - fn) <= 1e-6 * max(abs(fn), 1e-3 * scale_n)
            assert abs(Ts - fs) <= 1e-6 * max(abs(fs), 1e-3 * scale_s)


def test_block_design_map():
    np.testing.assert_array_equal(block_design_map([1.0, 2.0], 5), [1, 1, 1, 2, 2])
    np.testing.assert_array_equal(block_design_map([3.0], 4), [3, 3, 3, 3])
    with pytest.raises(ValueError):
        block_design_map([1.0, 2.0, 3.0], 2)


SMALL = ChainModel(n_nodes=31, k_bend=200.0, precrack=10, load=LoadSchedule(0.02, 10))


def test_energy_zero_and_translation():
    m = SMALL
    assert total_energy(np.zeros(m.n_nodes), m, 0.0) == 0.0
    c = 3e-5
    design = [1.5, 0.7]
    w = m.weights(design)
    expected = sum(wj * cohesive_potential(2 * c, 0.0, m.cohesive) for wj in w)
    assert total_energy(np.full(m.n_nodes, c), m, c, design) == pytest.approx(expected, rel=1e-12)


def test_energy_gradient_finite_differences():
    m = SMALL
    rng = np.random.default_rng(0)
    u = rng.uniform(0, 3e-4, m.n_nodes)
    design = [1.2, 0.8, 1.9]
    g = energy_gradient(u, m, design)
    h = 1e-9
    for i in range(m.n_nodes):
        e = np.zeros(m.n_nodes)
        e[i] = h
        up, um = u + e, u - e
        fd = (total_energy(up, m, up[0], design) - total_energy(um, m, um[0], design)) / (2 * h)
        assert abs(g[i] - fd) <= 1e-6 * max(abs(fd), 1e-3 * np.max(np.abs(g)))


def test_reaction_is_energy_derivative():
    m = SMALL
    u = solve_time_step(np.zeros(m.n_nodes), 5e-3, m)
    h = 1e-8
    up, um = u.copy(), u.copy()
    up[0] += h
    um[0] -= h
    fd = (total_energy(up, m, up[0]) - total_energy(um, m, um[0])) / (2 * h)
    assert reaction_force(u, m) == pytest.approx(fd, rel=1e-6)
    assert reaction_force(u, m) > 0


def test_unloaded_step_is_zero():
    np.testing.assert_array_equal(solve_time_step(np.zeros(31), 0.0, SMALL), 0.0)


def test_equilibrium_residual():
    m = SMALL
    u = solve_time_step(np.zeros(m.n_nodes), 1e-2, m, [0.6])
    g = energy_gradient(u, m, [0.6])
    assert np.max(np.abs(g[1:])) <= m.tolerance
    assert u[0] == 1e-2


def test_newton_lowers_energy_from_warm_start():
    m = SMALL
    u_prev = solve_time_step(np.zeros(m.n_nodes), 4e-3, m)
    u = solve_time_step(u_prev, 6e-3, m)
    assert total_energy(u, m, 6e-3) <= total_energy(u_prev, m, 6e-3)


def test_stiff_beam_gives_affine_profile():
    ref = reference_model()
    m = ChainModel(k_bend=1e8 * ref.k_bend)
    bd = 2e-3
    u = solve_time_step(np.zeros(m.n_nodes), bd, m)
    curvature = u[:-2] - 2 * u[1:-1] + u[2:]
    assert np.max(np.abs(curvature)) <= 1e-6 * bd
    line = np.polyval(np.polyfit(np.arange(m.n_nodes), u, 1), np.arange(m.n_nodes))
    assert np.max(np.abs(u - line)) <= 1e-6 * bd


def _linearised_solution(m, bd, design):
    """Dense solve with the tangent stiffness at zero opening."""
    n = m.n_nodes
    D = np.zeros((n - 2, n))
    for i in range(n - 2):
        D[i, i:i + 3] = (1.0, -2.0, 1.0)
    c = m.cohesive
    K = m.k_bend * D.T @ D + np.diag(4.0 * m.weights(design) * c.phi_n / c.delta_n_star ** 2)
    free = np.arange(1, n)
    u = np.zeros(n)
    u[0] = bd
    u[free] = np.linalg.solve(K[np.ix_(free, free)], -K[free, 0] * bd)
    return u


def test_small_load_matches_linearisation():
    m = SMALL
    bd = 1e-3 * m.cohesive.delta_n_star
    design = [1.3, 0.9]
    u = solve_time_step(np.zeros(m.n_nodes), bd, m, design)
    lin = _linearised_solution(m, bd, design)
    assert np.max(np.abs(u - lin)) <= 0.01 * np.max(np.abs(lin))


def test_rigid_interface_linear_history():
    m = ChainModel(rigid_interface=True)
    h = simulate(m, [1.0])
    kappa = rigid_stiffness(m)
    np.testing.assert_allclose(h.reaction, kappa * h.displacement, rtol=1e-12, atol=1e-300)
    assert mechanical_work(h) == pytest.approx(-0.5 * kappa * m.load.T ** 2, rel=1e-12)


@pytest.mark.parametrize("c", [2, 3, 7, 25, 50])
def test_rigid_stiffness_matches_exact_elimination(c):
    m = ChainModel(n_nodes=c + 5, k_bend=3.0, precrack=c, rigid_interface=True)
    assert rigid_stiffness(m) == pytest.approx(3.0 * float(exact_rigid_ratio(c)), rel=1e-15)


def test_rigid_stiffness_cantilever_limit():
    # a discretised cantilever of length a = precrack * h: F/u -> 3 EI / a^3
    m = ChainModel(n_nodes=401, k_bend=1.0, precrack=200, rigid_interface=True)
    a = m.precrack * m.h
    EI = m.k_bend * m.h ** 3
    assert rigid_stiffness(m) == pytest.approx(3 * EI / a ** 3, rel=2e-2)


def test_weak_interface_softens():
    h = simulate(reference_model(), [0.5])
    F = h.reaction
    peak = int(np.argmax(F))
    assert 0 < peak < len(F) - 1
    assert F[-1] < 0.8 * F[peak]


def test_simulation_deterministic():
    a = simulate(reference_model(), [0.9, 1.7])
    b = simulate(reference_model(), [0.9, 1.7])
    np.testing.assert_array_equal(a.openings, b.openings)
    np.testing.assert_array_equal(a.reaction, b.reaction)
    assert a.t[0] == 0 and np.all(a.openings[0] == 0)
    np.testing.assert_allclose(np.diff(a.t), reference_model().load.dt, rtol=1e-12)


def test_mechanical_work_trapezoid():
    t = np.linspace(0, 1, 6)
    zero = SimulationHistory(t, t, np.zeros(6), np.zeros((6, 3)), np.zeros(6, dtype=int))
    assert mechanical_work(zero) == 0.0
    lin = SimulationHistory(t, 0.3 * t, 7.0 * 0.3 * t, np.zeros((6, 3)), np.zeros(6, dtype=int))
    assert mechanical_work(lin) == pytest.approx(-0.5 * 7.0 * 0.3 ** 2, rel=1e-14)


def test_history_csv(tmp_path):
    h = simulate(SMALL, [1.0])
    path = tmp_path / "ld.csv"
    h.save_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,u_hat,F"
    assert len(lines) == SMALL.load.n_steps + 2
    assert float(lines[-1].split(",")[2]) == h.reaction[-1]


def test_calibration_energy_release():
    h = 0.01
    kb = calibrate_k_bend(h, 0.5, 0.01)
    EI = kb * h ** 3
    G = 9 * EI * 0.01 ** 2 / (2 * 0.5 ** 4)
    assert G == pytest.approx(CohesiveParams().phi_n, rel=1e-12)
    assert reference_model().k_bend == pytest.approx(kb, rel=1e-15)


def test_model_validation():
    with pytest.raises(ValueError):
        ChainModel(n_nodes=2)
    with pytest.raises(ValueError):
        ChainModel(k_bend=-1.0)
    with pytest.raises(ValueError):
        ChainModel(precrack=101)
    with pytest.raises(ValueError):
        LoadSchedule(0.1, 0)


def test_chain_objective_parameters():
    obj = ChainObjective.from_parameters({"n_steps": 5, "T": 0.01}, 2)
    assert obj.model.load == LoadSchedule(0.01, 5)
    with pytest.raises(ValueError):
        ChainObjective.from_parameters({"stiffness": 1.0}, 2)
    with pytest.raises(EvaluationError):
        obj([1.0, -1.0])
    assert obj([1.0, 1.0]) == mechanical_work(simulate(obj.model, [1.0, 1.0]))


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(0.5, 2.0), min_size=1, max_size=4))
def test_work_is_negative_and_finite(design):
    w = ChainObjective(reference_model())(design)
    assert math.isfinite(w) and w < 0
