"""Smoke test for the pymixnash extension module.

Build and install first:  pip install ./crates/py
Then run:                  python3 python/smoke_test.py
"""

import math

import pymixnash as mx


def main():
    g = mx.Graph.ring(5)
    assert g.is_connected()
    lap = g.laplacian()
    assert all(abs(sum(row)) < 1e-12 for row in lap)
    _, eig = g.estimator_matrix(2)
    assert eig[0] > 0.0, eig
    assert not mx.Graph(4, [[1, 2], [3, 4]]).is_connected()

    game = mx.QuadraticGame.vehicles5()
    x_star = game.nash()
    assert all(abs(v + 0.5) < 1e-10 for v in x_star), x_star
    assert max(abs(v) for v in game.pseudo_gradient(x_star)) < 1e-10
    assert game.monotonicity() > 0.0

    kappa = mx.tanh_kappa()
    assert abs(kappa - math.exp(-(kappa + 1.0))) < 1e-12

    sc = mx.Scenario.builtin("vehicles5")
    cert = sc.verify_nash()
    assert cert["residual"] < 1e-10

    res = sc.with_overrides(variant="disturbance_free", t_final=10.0).run()
    summary = res.summary
    assert not res.blown_up
    assert summary["final_err_2"] < 1e-3, summary
    assert summary["fitted_rate"] > 0.0, summary
    assert len(res.times) == len(res.err_x) == len(res.actions)
    assert res.to_csv().startswith("# schema_version=")

    try:
        mx.Scenario.from_json('{"base": "vehicles5", "gains": {"k9": 1}}')
    except mx.MixnashError as e:
        assert "k9" in str(e)
    else:
        raise AssertionError("unknown field accepted")

    code, out, _ = mx.run_cli(["verify-nash", "--scenario", "vehicles5"])
    assert code == 0, out

    print(
        "pymixnash smoke test ok: final_err_2=%.3e rate=%.3f kappa=%.6f"
        % (summary["final_err_2"], summary["fitted_rate"], kappa)
    )


if __name__ == "__main__":
    main()
