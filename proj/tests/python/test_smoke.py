import json

import numpy as np
import pytest

import ssaid


@pytest.fixture
def problem():
    return ssaid.make_quadratic_problem(4, kappa=5.0, sigma=1.0, seed=3)


def test_problem_shape_and_constants(problem):
    assert problem.dim_x == 4 and problem.dim_y == 4
    assert problem.family == "quadratic"
    c = ssaid.constants(problem)
    assert c["kappa"] == pytest.approx(5.0)
    assert ssaid.derived_constants(problem)["l_phi"] > 0
    assert 0 < ssaid.default_step_sizes(problem, 1000)["beta"]


def test_hypergradient_matches_differences(problem):
    x = np.linspace(-1.0, 1.0, 4)
    g = problem.exact_hypergradient(x)
    h = 1e-6
    fd = np.array([(problem.upper_value(x + h * e) - problem.upper_value(x - h * e)) / (2 * h)
                   for e in np.eye(4)])
    assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(g)


def test_run_columns_and_determinism(problem):
    a = ssaid.run(problem, 200, seed=1, stride=10)
    b = ssaid.run(problem, 200, seed=1, stride=10)
    assert list(a["k"]) == list(range(0, 201, 10))
    assert np.array_equal(a["grad_phi_sq"], b["grad_phi_sq"])
    assert a["gc_count"][-1] == 600 and a["mv_count"][-1] == 400
    assert ssaid.trace_csv(problem, 50, seed=1) == ssaid.trace_csv(problem, 50, seed=1)


def test_one_step_multi_loop_replays_single_loop(problem):
    assert (ssaid.trace_csv(problem, 100, seed=2)
            == ssaid.trace_csv(problem, 100, seed=2, algorithm="multiloop_1"))


def test_verify_v_bound(problem):
    (report,) = ssaid.verify(problem, ["v_bound"], horizon=5000)
    assert report["lemma_id"] == "VBound"
    assert report["verdict"] == "pass"


def test_sweep_and_fit():
    summary, records = ssaid.sweep([1.0], [1, 2], epsilon=1e12, max_k=5, dim=2)
    assert summary["cells"][0]["median"] == 0
    assert records.splitlines()[0] == "kappa,seed,algorithm,complexity,censored"
    slope, _, r2 = ssaid.fit_loglog([1, 2, 4, 8], [1, 0.5, 0.25, 0.125])
    assert slope == pytest.approx(-1.0) and r2 == pytest.approx(1.0)


def test_json_round_trip(problem, tmp_path):
    path = str(tmp_path / "p.json")
    problem.save(path)
    assert ssaid.load_problem(path).hash() == problem.hash()
    assert ssaid.problem_from_json(problem.to_json()).hash() == problem.hash()


def test_cli_in_process(tmp_path):
    code, out, err = ssaid.cli(["--out-dir", str(tmp_path), "gen", "--dim", "2"])
    assert code == 0 and out.strip().endswith("problem.json")
    assert json.loads((tmp_path / "problem.json").read_text())["dim_x"] == 2
    code, _, err = ssaid.cli(["run", "--bogus"])
    assert code == 1 and "Usage" in err


def test_exceptions_map_to_python_types():
    with pytest.raises(ValueError):
        ssaid.make_quadratic_problem(3, kappa=0.5)
    with pytest.raises(ssaid.InsufficientData):
        ssaid.fit_loglog([1, 2], [1, 2])
    with pytest.raises(ssaid.InvalidProblem):
        ssaid.problem_from_json('{"family": "quadratic"}')
    assert issubclass(ssaid.Divergence, ssaid.Error)
    assert issubclass(ssaid.InvalidParameter, ValueError)
