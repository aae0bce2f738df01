"""Smoke test for the bridgemark Python bindings.

Build and install first:  pip install --no-build-isolation -e crates/python
Run:                      python3 python/smoke_test.py
"""

import json
import math
import os
import tempfile

import bridgemark_py as bm


def check_hamiltonian():
    q, p, a = [0.0, 0.7], [1.0, -0.5], 0.6
    k = math.exp(-0.7**2 / (2 * a * a))
    expected = 0.5 * (1.0 + 0.25 + 2 * (1.0 * -0.5) * k)
    got = bm.hamiltonian(q, p, 1, a)
    assert abs(got - expected) < 1e-14, (got, expected)


def check_simulation():
    q0 = [1.0, 0.0, 0.0, 0.6, -1.0, 0.0]
    p0 = [0.0, 0.5, -0.4, 0.0, 0.0, -0.5]
    rows = bm.simulate(q0, p0, 2, 0.5, 0.0, seed=1, h=0.001)
    assert len(rows) == 1001 and all(len(r) == 12 for r in rows)
    assert rows[0] == q0 + p0
    h0 = bm.hamiltonian(q0, p0, 2, 0.5)
    h1 = bm.hamiltonian(rows[-1][:6], rows[-1][6:], 2, 0.5)
    assert abs(h1 - h0) < 1e-2 * h0, (h0, h1)
    again = bm.simulate(q0, p0, 2, 0.5, 0.3, seed=7)
    assert again == bm.simulate(q0, p0, 2, 0.5, 0.3, seed=7)


def check_cli_run():
    with tempfile.TemporaryDirectory() as tmp:
        cfg = os.path.join(tmp, "sim.json")
        with open(cfg, "w") as f:
            json.dump(
                {
                    "mode": "simulate",
                    "gamma": 0.2,
                    "h": 0.02,
                    "trajectories": 3,
                    "initial": {"kind": "circle", "n": 4, "r": 1.0},
                },
                f,
            )
        out = os.path.join(tmp, "out")
        bm.run("simulate", cfg, out, seed=3)
        shapes = bm.read_shapes(os.path.join(out, "shapes.csv"))
        assert sorted(shapes) == [0, 1, 2]
        assert all(len(s) == 4 and len(s[0]) == 2 for s in shapes.values())
        try:
            bm.run("match", cfg, out, seed=3)
        except ValueError:
            pass
        else:
            raise AssertionError("mode mismatch was not reported")


def check_numerical_failure():
    try:
        bm.simulate([0.0, 0.1], [1e200, -1e200], 1, 1.0, 0.0, seed=0)
    except ArithmeticError:
        return
    raise AssertionError("diverging simulation was not reported")


if __name__ == "__main__":
    for check in (check_hamiltonian, check_simulation, check_cli_run, check_numerical_failure):
        check()
        print(f"ok  {check.__name__}")
    print("python smoke test passed")
