import json
import math

import numpy as np
import pytest

import dqp


def random_qp(seed, n=8, m=6):
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((n, n))
    Q = F.T @ F + np.eye(n)
    q = rng.standard_normal(n)
    A = rng.standard_normal((m, n))
    b = A @ rng.standard_normal(n) + 0.1
    return Q, q, A, b


def test_osqp_matches_label():
    Q, q, A, b = random_qp(0)
    x_star, lam, residual = dqp.label(Q, q, A, b)
    assert residual <= 1e-9
    res = dqp.osqp_solve(Q, q, A, b, rho=1.0, max_iter=4000)
    assert np.max(np.abs(res["x"] - x_star)) < 1e-5
    assert np.all(A @ x_star <= b + 1e-8)
    assert np.all(lam >= -1e-10)


def test_label_agrees_with_cvxpy():
    cp = pytest.importorskip("cvxpy")
    Q, q, A, b = random_qp(3)
    x = cp.Variable(Q.shape[0])
    prob = cp.Problem(cp.Minimize(0.5 * cp.quad_form(x, Q) + q @ x), [A @ x <= b])
    prob.solve()
    x_star, _, _ = dqp.label(Q, q, A, b)
    assert np.max(np.abs(x.value - x_star)) < 1e-4


def test_generate_and_distributed_solve():
    spec = json.dumps({"kind": "random_networked_qp", "grid_rows": 2, "grid_cols": 2, "n_i": 3, "m_ij": 2, "seed": 4})
    lines = dqp.generate(spec, 3).splitlines()
    assert len(lines) == 3
    assert dqp.generate(spec, 3) == "\n".join(lines) + "\n"
    record = json.loads(lines[0])
    assert record["schema_version"] == dqp.SCHEMA_VERSION
    out = dqp.dqp_solve(lines[0], rho=1.0, mu=1.0, alpha=1.0, max_iter=3000)
    assert out["gaps"][-1] <= 1e-6
    assert dqp.optimality_gap(out["w"], np.array(record["w_star"])) <= 1e-6


def test_train_and_loss_gradient():
    spec = json.dumps({"kind": "random_networked_qp", "grid_rows": 2, "grid_cols": 2, "n_i": 3, "m_ij": 2, "seed": 10})
    data = dqp.generate(spec, 4)
    first = data.splitlines()[0]
    untrained = dqp.train(data, K=4, epochs=0)
    trained = dqp.train(data, K=4, epochs=20, lr=1e-2, batch=2)
    loss0, grad = dqp.loss(first, untrained)
    assert loss0 > 0 and grad.shape[0] > 0
    assert np.all(np.isfinite(grad))
    gaps = dqp.unrolled_gaps(first, trained)
    assert len(gaps) == 4
    total_before = sum(dqp.loss(line, untrained)[0] for line in data.splitlines())
    total_after = sum(dqp.loss(line, trained)[0] for line in data.splitlines())
    assert total_after < total_before


def test_bounds():
    assert dqp.kl_bernoulli(0.5, 0.5) == 0.0
    q = dqp.kl_inverse(0.1, 0.05)
    assert abs(dqp.kl_bernoulli(0.1, q) - 0.05) <= 1e-8
    qb = dqp.sample_convergence_bound(0.2, 30000, 0.001)
    assert 0.2 < qb < dqp.pac_bound(qb, 50.0, 15000, 0.009) < 1.0
    assert dqp.progress_metric(np.zeros(2), np.zeros(2), np.zeros(2)) is None
    assert math.isclose(dqp.progress_metric(np.array([1.5, 2.0]), np.zeros(2), np.array([3.0, 4.0])), 0.5)
    assert dqp.adapt_rho(100, 1, 1) == 2.0
    assert dqp.penalty_sweep("random_qp") == [0.1, 0.3, 0.5, 1, 3, 5, 10]


def test_errors_map_to_python():
    with pytest.raises(ValueError):
        dqp.generate(json.dumps({"kind": "nope"}), 1)
    with pytest.raises(ValueError):
        dqp.kl_inverse(1.5, 0.1)
