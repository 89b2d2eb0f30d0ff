"""Smoke test for the carleman extension module.

Build the module and place it next to this file first:

    cargo build -p carleman-py --release
    cp target/release/libcarleman.so python/carleman.so

Then run ``python python/smoke_test.py`` or ``pytest python``.
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import carleman  # noqa: E402


def test_expression_and_derivative():
    e = carleman.Expression("exp(mu*x1) * x2^2", 2, {"mu": 0.5})
    assert math.isclose(e([2.0, 3.0]), math.e * 9.0, rel_tol=1e-14)
    d = e.differentiate(1)
    assert math.isclose(d([2.0, 3.0]), 0.5 * math.e * 9.0, rel_tol=1e-14)


def test_classical_multiplier_is_certified():
    field = carleman.CoefficientField(["1", "1"], 2)
    weight = carleman.Expression("(x1^2 + x2^2)/2", 2)
    region = carleman.Region.ball([2.0, 0.0], 1.0)
    report = carleman.check_condition(field, weight, region, 33)
    assert report["verdict"] == "certified"
    assert abs(report["mu0"] - 2.0) < 1e-9


def test_construct_exponential_weight():
    field = carleman.CoefficientField(["exp(x1 + x2)", "exp(x1 + x2)"], 2)
    region = carleman.Region([(1.0, 3.0), (-1.0, 1.0)], ["(x1 - 2)^2 + x2^2 - 1"])
    out = carleman.construct(field, region)
    assert out["certificate"]["sign_case"] == "positive"
    assert out["certificate"]["j"] == 1
    assert out["certificate"]["report"]["mu0"] > 0.0
    assert out["reverification"]["verdict"] == "certified"


def test_disk_trap_has_no_admissible_index():
    field = carleman.CoefficientField(["1 + x1^2 + x2^2", "1 + x1^2 + x2^2"], 2)
    region = carleman.Region.ball([0.0, 0.0], math.sqrt(2.0))
    try:
        carleman.construct(field, region)
    except ValueError as e:
        assert "no admissible index" in str(e)
    else:
        raise AssertionError("construction should not find an index")


def test_curvature_sign_change():
    consts = {"mu1": 0.5, "mu2": 0.1}
    field = carleman.CoefficientField(["exp(mu1*x1)", "exp(-mu2*x1^2)"], 2, True, consts)
    region = carleman.Region.ball([2.0, 0.0], math.sqrt(1.5))
    assert carleman.check_w32(0.5, 0.1)["holds"]
    report = carleman.classify_curvature(field, region, 33, [(1, 1.0), (1, 3.0)])
    assert report["classification"] == "sign_changing"
    assert report["witness_positive"][0] == 1.0
    assert report["witness_negative"][0] == 3.0
    a1 = carleman.Expression("exp(mu1*x1)", 2, consts)
    a2 = carleman.Expression("exp(-mu2*x1^2)", 2, consts)
    k = carleman.curvature_at(a1, a2, [1.0, 0.0])
    assert math.isclose(k["gauss"], k["wang"], rel_tol=1e-10)


def test_identity_ray_escapes_after_radius():
    field = carleman.CoefficientField(["1", "1"], 2)
    region = carleman.Region.ball([2.0, 0.0], 1.0)
    ray = carleman.trace_ray(field, region, [2.0, 0.0], [0.0, 1.0])
    assert abs(ray["escape_time"] - 1.0) < 1e-6
    fan = carleman.ray_fan(field, region, [2.0, 0.0], count=8)
    assert len(fan["rays"]) == 8


def test_run_config():
    toml = """
[problem]
dim = 2
weight = "(x1^2 + x2^2)/2"

[problem.A]
diagonal = true
entries = ["1", "1"]

[region]
box = [[1.0, 3.0], [-1.0, 1.0]]
constraints = ["(x1 - 2)^2 + x2^2 - 1"]
"""
    report = carleman.run("verify", toml)
    assert report["verdict"] == "certified"
    assert report["exit_code"] == 0


if __name__ == "__main__":
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for t in tests:
        t()
        print(f"ok {t.__name__}")
    print(f"{len(tests)} passed")
