"""Smoke test for the hgt_py extension module.

Build the module first (see README), then run:

    python python/smoke_test.py
"""

import math

import hgt_py


def main():
    k = hgt_py.Kernel("tanh-kernel")
    assert k.h(0.0) == 0.0
    assert abs(k.dh(0.0) - 1.0) < 1e-12
    assert k.validate()["all_pass"]

    c = k.constants_dict()
    assert abs(c["d1"] - 1.6061) < 1e-3, c
    assert abs(c["mu1"] - 1.887) < 2e-3, c
    print("constants", c)

    mono = hgt_py.monomorphic_ess(k, 0.5, 1.0)
    assert mono["valid"]
    assert abs(mono["ess"].points[0] - 0.25) < 1e-12
    assert abs(mono["ess"].rho0 - 0.9375) < 1e-12

    di = hgt_py.dimorphic_ess(k, 0.5, 0.065)
    assert di["valid"], di["reason"]
    z1, z2 = di["ess"].points
    assert abs(z1 - z2 - c["d1"]) < 1e-12

    tri = hgt_py.trimorphic_ess(k, 0.5, 0.05)
    assert len(tri.points) == 3
    report = hgt_py.verify_ess(tri, k, 0.5, 0.05)
    assert report["valid"], report
    print("trimorphic mu=5", tri)

    cls = hgt_py.classify(k, 0.5, 0.5 / (2 * 6.3176))
    assert cls["regime"] == "none", cls["regime"]

    eig = hgt_py.principal_eigen(0.1, 1.0, -4.0, 4.0, 1601)
    assert abs(eig["lambda"] - (1.0 - 0.1)) < 1e-3, eig["lambda"]

    rho = hgt_py.solve_rho([0.0], 1.0, 1.0, 1.0)
    assert abs(rho - 0.567143) < 1e-6

    run = hgt_py.simulate(0.0, 1.0, 0.1, z_min=-3.0, z_max=3.0, dz=0.02, dt=5e-4)
    assert run["steady"]
    assert abs(run["rho"] - eig["lambda"]) < 1e-2, (run["rho"], eig["lambda"])
    assert all(math.isfinite(x) for x in run["u"])
    print("simulate tau=0 eps=0.1: rho =", run["rho"], "support =", run["support"])

    print("ok")


if __name__ == "__main__":
    main()
