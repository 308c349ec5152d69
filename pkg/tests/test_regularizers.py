import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from viscoreg.maze import bundled_maze
from viscoreg.regularizers import (EikConfig, FKConfig, eik_batch_loss, eikonal_penalty, fk_batch_loss,
                                   fk_penalty, fk_penalty_grad, hinge_slack, sample_neighbors)
from viscoreg.value import closed_form_table, new_table


def test_slack_arithmetic():
    assert hinge_slack(1.0, 1.0, 0.01) == pytest.approx(100.0, rel=1e-15)
    assert FKConfig(nu=0.5, dt=2.0, q=3.0).slack == 12.0


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 0), st.lists(st.floats(-50, 0), min_size=1, max_size=8), st.floats(1e-3, 2.0))
def test_hinge_one_sided(v_s, samples, nu):
    cfg = FKConfig(nu=nu)
    excess = v_s - np.mean(samples) - cfg.slack
    pen = fk_penalty(v_s, samples, cfg)
    if excess <= 0:
        assert pen == 0.0 and fk_penalty_grad(v_s, samples, cfg) == 0.0
    else:
        assert pen == pytest.approx(excess ** 2)


def test_config_validation():
    for bad in (dict(nu=0), dict(dt=-1), dict(k=0), dict(k=1.5), dict(q=0)):
        with pytest.raises(ValueError):
            FKConfig(**bad)
    with pytest.raises(ValueError):
        EikConfig(speed=0)
    with pytest.raises(ValueError):
        fk_penalty(0.0, [], FKConfig())


def test_neighbours_are_free_and_deterministic(maze10):
    cfg = FKConfig(nu=2.0, k=16, seed=3)
    s = np.repeat(maze10.free_cells, 4)
    a = sample_neighbors(maze10, s, cfg)
    b = sample_neighbors(maze10, s[::-1], cfg, streams=np.arange(s.size)[::-1])
    assert maze10.is_free(a).all()
    np.testing.assert_array_equal(a, b[::-1])


def test_tiny_nu_stays_put(maze10):
    s = maze10.free_cells
    nb = sample_neighbors(maze10, s, FKConfig(nu=1e-4, k=8))
    np.testing.assert_array_equal(nb, np.repeat(s[:, None], 8, axis=1))


def test_fk_batch_gradient_matches_penalty(empty5):
    rng = np.random.default_rng(0)
    table = rng.uniform(-20, 0, (empty5.n_free, empty5.n_free))
    target = rng.uniform(-20, 0, table.shape)
    s = rng.choice(empty5.free_cells, 64)
    g = rng.choice(empty5.free_cells, 64)
    cfg = FKConfig(nu=0.8, k=5)
    loss, grad = fk_batch_loss(table, target, empty5, s, g, cfg)
    fi = empty5.free_index
    nb = sample_neighbors(empty5, s, cfg)
    pen = fk_penalty(table[fi[s], fi[g]], target[fi[nb], fi[g][:, None]], cfg)
    assert loss == pytest.approx(pen.mean())
    np.testing.assert_allclose(grad, fk_penalty_grad(table[fi[s], fi[g]], target[fi[nb], fi[g][:, None]], cfg))


def test_closed_form_has_no_fk_violation_at_large_slack(maze10):
    v = closed_form_table(maze10, 0.99)
    s = np.repeat(maze10.free_cells, maze10.n_free)
    g = np.tile(maze10.free_cells, maze10.n_free)
    loss, grad = fk_batch_loss(v, v, maze10, s, g, FKConfig(nu=0.2, k=8))
    assert loss == 0.0 and not grad.any()


def test_eikonal_penalty_and_gradient(empty5):
    assert eikonal_penalty([3.0, 4.0]) == pytest.approx(16.0)
    assert eikonal_penalty([0.6, 0.8]) == pytest.approx(0.0)
    rng = np.random.default_rng(1)
    table = rng.uniform(-10, 0, (empty5.n_free, empty5.n_free))
    s = rng.choice(empty5.free_cells, 20)
    g = rng.choice(empty5.free_cells, 20)
    cfg = EikConfig(speed=0.5)
    loss, cells, grads = eik_batch_loss(table, empty5, s, g, cfg)
    fi = empty5.free_index
    # central differences; one-sided stencils can list the same entry twice
    for i in range(20):
        t = table.copy()
        h = 1e-6
        t[fi[cells[i, 0]], fi[g[i]]] += h
        lp = eik_batch_loss(t, empty5, s[i:i + 1], g[i:i + 1], cfg)[0]
        t[fi[cells[i, 0]], fi[g[i]]] -= 2 * h
        lm = eik_batch_loss(t, empty5, s[i:i + 1], g[i:i + 1], cfg)[0]
        expect = grads[i][cells[i] == cells[i, 0]].sum()
        assert (lp - lm) / (2 * h) == pytest.approx(expect, rel=1e-4, abs=1e-8)


def test_zero_table_eikonal_subgradient(empty5):
    t = new_table(empty5)
    loss, _, grads = eik_batch_loss(t, empty5, empty5.free_cells, empty5.free_cells, EikConfig())
    assert loss == pytest.approx(1.0) and not grads.any()
