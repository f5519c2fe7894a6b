"""Smoke test for the opgraph extension module.

Build and install first:  pip install --no-build-isolation ./crates/python
"""

import json
import math
import random
import tempfile

import opgraph


def main():
    g = opgraph.Graph.from_yaml(opgraph.template_spec("cassi", size=8))
    assert g.all_linear
    assert g.plan() == ["mask", "disperse", "sum", "detect"], g.plan()
    passed, delta = g.adjoint_check(trials=5, seed=0)
    assert passed and delta < 1e-6, delta

    rnd = random.Random(0)
    n_in = math.prod(g.input_shape)
    n_out = math.prod(g.output_shape)
    x = [rnd.gauss(0, 1) for _ in range(n_in)]
    y = [rnd.gauss(0, 1) for _ in range(n_out)]
    lhs = sum(a * b for a, b in zip(g.forward(x), y))
    rhs = sum(a * b for a, b in zip(x, g.adjoint(y)))
    assert abs(lhs - rhs) <= 1e-9 * max(abs(lhs), 1.0), (lhs, rhs)

    mri = opgraph.Graph.from_yaml(opgraph.template_spec("mri", size=8))
    k = mri.forward([1.0] * math.prod(mri.input_shape))
    assert isinstance(k[0], complex)

    assert abs(opgraph.psnr([0.6] * 4, [0.5] * 4, [2, 2]) - 20.0) < 1e-9
    lo, hi = opgraph.bootstrap_ci([1.0, 2.0, 3.0, 4.0], b=1000, seed=7)
    assert (lo, hi) == opgraph.bootstrap_ci([1.0, 2.0, 3.0, 4.0], b=1000, seed=7)
    assert lo <= 2.5 <= hi
    assert [k for _, k in opgraph.basis_growth(["cassi", "cacti", "spc"])] == [4, 4, 4]

    res = json.loads(opgraph.run_scenario("ct", [3.0], size=16, seed=0, calib="alg1", phantoms=2))
    assert res["means"]["I"]["psnr_db"] > res["means"]["II"]["psnr_db"]
    assert res["rho"] is not None and res["rho"] >= 0.9, res["rho"]

    try:
        opgraph.template_spec("nope")
    except ValueError as e:
        assert "UNKNOWN_MODALITY" in str(e)
    else:
        raise AssertionError("expected ValueError")

    with tempfile.TemporaryDirectory() as d:
        try:
            opgraph.verify_run(d)
        except ValueError as e:
            assert "MISSING_MANIFEST" in str(e)
        else:
            raise AssertionError("expected ValueError")

    print(f"opgraph {opgraph.__version__}: smoke test passed (rho = {res['rho']:.3f})")


if __name__ == "__main__":
    main()
