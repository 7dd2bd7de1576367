"""Smoke test for the hmvp_py extension.

Build and install first, e.g.
    pip install maturin
    maturin build --release -m crates/py/Cargo.toml -o dist && pip install dist/hmvp_py-*.whl
then run
    python python/smoke_test.py
"""

import math

import hmvp_py as h


def close(a, b, tol):
    return abs(a - b) <= tol * (1.0 + max(abs(a), abs(b)))


def main():
    assert close(h.m_constant(1), math.pi / 12, 1e-15)
    assert close(h.m_constant(2), 1 / (2 * math.pi), 1e-15)
    a, b = h.alpha_beta("inf", 1)
    assert (a, b) == (1.0, 0.0)
    a, b = h.alpha_beta(4.0, 1)
    assert close(a + b, 1.0, 1e-15)

    x = h.HPoint([0.3, -0.2, 0.5])
    y = h.HPoint([1.0, 2.0, -1.0])
    e = x * x.inverse()
    assert all(abs(c) < 1e-15 for c in e.coords)
    assert close(x.dilate(2.0).gauge(), 2.0 * x.gauge(), 1e-14)
    assert close((x * y).compose(x).coords[2], x.compose(y * x).coords[2], 1e-14)

    r = h.moment_check(1, 0.5)
    assert r["odd_moments"] < 1e-12 and r["cross_moments"] < 1e-12
    assert close(r["M_estimate"], r["M_closed_form"], 1e-10)

    # H-harmonic polynomials have the mean-value property.
    for spec in ["x1", "x3", "x1*x2", "x1^2 - x2^2"]:
        assert close(h.weighted_mean(spec, x, 0.5), h.weighted_mean(spec, x, 0.1), 1e-10)

    p2 = h.MvpParams(1, 2.0, 0.3)
    assert h.mvp_blend("trig", 0.5, x, p2) == h.spacetime_weighted_mean("trig", 0.5, x, p2)
    pinf = h.MvpParams(1, "inf", 0.3)
    assert h.mvp_blend("trig", 0.5, x, pinf) == h.spacetime_midrange("trig", 0.5, x, pinf)

    s = h.expansion_study("poly-mixed", 3.0, 0.5, h.HPoint([0.2, 0.1, 0.3]))
    assert s["report"]["fitted_order"] > 2.2

    c = h.counterexample_report()
    assert c["passed"], c
    assert abs(c["fit"]["fitted_order"] - 4.0) < 0.1

    out = h.solve(1, 2.0, 0.2, 0.4, "const", t_final=0.08)
    assert all(v == 1.0 for v in out["final_values"])
    out = h.solve(1, 2.0, 0.2, 1.0, "heat-reference", reference="heat-reference")
    assert out["max_error"] < 0.05

    try:
        h.solve(1, 2.0, 0.2, 0.4, "const", collar=0.1)
    except ValueError as err:
        assert "invalid grid" in str(err)
    else:
        raise AssertionError("narrow collar accepted")

    print("hmvp_py smoke test passed")


if __name__ == "__main__":
    main()
