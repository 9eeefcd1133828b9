"""Smoke test for the `mcd` extension module.

Build and install first:
    pip install maturin
    pip install --no-build-isolation -e crates/py
"""

import math
import random

import mcd


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    fit = mcd.mcd_exact([[0.0], [1.0], [2.0], [10.0]], gamma=0.75)
    assert fit.subset == [0, 1, 2], fit.subset
    assert close(fit.scatter[0][0], 2.0 / 3.0, 1e-15)
    assert fit.exact
    print("exact fit:", fit)

    rng = random.Random(5)
    cloud = [[rng.gauss(0, 1), rng.gauss(0, 1)] for _ in range(300)]
    cloud += [[20.0 + rng.random(), 20.0] for _ in range(20)]
    heuristic = mcd.mcd_cstep(cloud, gamma=0.75, restarts=20, seed=3)
    assert all(i < 300 for i in heuristic.subset), "outliers must be trimmed"
    assert heuristic.det > 0
    print("cstep fit:", heuristic)

    c = mcd.theory("gaussian", k=2, gamma=0.5)
    assert close(c["r"], math.sqrt(2 * math.log(2)), 1e-12)
    assert close(c["alpha"] ** 2, 0.306853, 1e-6)
    assert c["beta1"] < 0 and c["beta2"] < 0 and c["beta6"] > 0
    print("tau =", c["tau"])

    mu, sigma, rho = mcd.influence([0.0, 0.0], gamma=0.5)
    assert mu == [0.0, 0.0]
    assert close(rho, c["lambda2"] + c["lambda3"], 1e-12)
    assert close(sigma[0][0], c["kappa1"] + c["kappa4"], 1e-12)

    v = mcd.sandwich(cloud[:300], gamma=0.75, density="gaussian", restarts=10)
    assert v["labels"] == ["h1", "h2", "A11", "A12", "A22", "s"]
    assert all(v["covariance"][i][i] > 0 for i in range(6))

    report = mcd.simulate("clt", n=60, reps=6, seed=1, restarts=3)
    assert report["check"] == "clt"
    assert len(report["replications"]) + report["failures"] == 6

    try:
        mcd.theory("no_such_model")
    except mcd.McdError as e:
        print("rejected:", e)
    else:
        raise AssertionError("unknown model accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
