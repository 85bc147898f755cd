"""Smoke test for the `unlearn_lab` extension module.

Build and install first:

    pip install maturin
    maturin develop --release -m crates/py/Cargo.toml

then run `python python/smoke_test.py` from the repository root.
"""

import json
import math
import pathlib
import sys
import tempfile

import unlearn_lab as ul

ROOT = pathlib.Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "crates" / "core" / "configs"


def config(name):
    return (CONFIGS / f"{name}.json").read_text()


def check_constants():
    spec = ul.LossSpec("quadratic", 5, 1.0, projection_radius=2.0)
    assert spec.family == "quadratic"
    assert (spec.smoothness, spec.strong_convexity) == (1.0, 1.0)
    assert spec.grad_bound == 3.0
    g = spec.grad([1.0, 0, 0, 0, 0], [0.0] * 5)
    assert g == [-1.0, 0.0, 0.0, 0.0, 0.0], g
    ridge = ul.LossSpec("ridge_logistic", 3, 1.0, projection_radius=1.0, lam=0.5)
    assert ridge.convexity_class == "strongly_convex", ridge.convexity_class


def check_bounds():
    b = ul.sigma_psgd_r2d("convex", 0.01, 1.0, 0.0, 1.0, 100, 5, 100, 60)
    assert abs(b.sigma - 0.04) < 1e-12, b
    assert b.moment == "first"
    assert abs(b.noise_std(1.0, 0.01) - 12.43) < 0.01
    assert ul.sigma_psgd_r2d("convex", 0.01, 1.0, 0.0, 1.0, 100, 5, 100, 100).sigma == 0.0
    try:
        ul.sigma_psgd_r2d("convex", 3.0, 1.0, 0.0, 1.0, 100, 5, 100, 60)
    except ul.CertificationError:
        pass
    else:
        raise AssertionError("step above 2/L was accepted")
    assert ul.gaussian_privacy_curve(1.0, 5.0, 1.0) < 0.05
    assert math.isclose(ul.chi_square_empirical(100, 10), 10 / 90)


def check_calibrate():
    cal = json.loads(ul.calibrate(config("calibrate_convex")))
    assert abs(cal["noise_std"] - 12.43) < 0.01, cal
    sc = json.loads(ul.calibrate(config("psgd_strongly_convex"), variant="main"))
    assert sc["variant"] == "main"
    try:
        ul.calibrate("{}")
    except ul.ConfigError:
        pass
    else:
        raise AssertionError("empty config was accepted")


def check_runs():
    c = ul.run_coupled(config("psgd_strongly_convex"), replica=3)
    assert len(c.dist_train_retrain) == 201
    d = math.dist(c.retrain_final, c.unlearn_final)
    assert abs(d - c.dist_final) < 1e-12
    with tempfile.TemporaryDirectory() as tmp:
        summary = json.loads(ul.run(config("sgd_d2d_quadratic"), tmp, coupled=True, replicas=8))
        assert summary["replicas"] == 8
        assert (pathlib.Path(tmp) / "summary.json").exists()


def check_verify():
    report = json.loads(ul.verify("exact", trials=200))
    failed = [c["name"] for c in report["checks"] if not c["pass"]]
    assert report["pass"], failed


def main():
    for check in (check_constants, check_bounds, check_calibrate, check_runs, check_verify):
        check()
        print(f"ok {check.__name__}")
    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
