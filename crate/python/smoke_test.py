#!/usr/bin/env python3
"""Smoke test for the trafficast_py extension module.

Builds nothing itself: run `cargo build --release -p trafficast-python`
first (or a debug build). The script locates the compiled cdylib, exposes it
under the importable name, and exercises the Python surface end to end.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def import_module():
    candidates = [
        REPO / "target" / "release" / "libtrafficast_py.so",
        REPO / "target" / "debug" / "libtrafficast_py.so",
        REPO / "target" / "release" / "libtrafficast_py.dylib",
        REPO / "target" / "debug" / "libtrafficast_py.dylib",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit(
            "trafficast_py cdylib not found; run "
            "`cargo build --release -p trafficast-python` first"
        )
    stage = Path(tempfile.mkdtemp(prefix="trafficast_py_"))
    suffix = ".so" if built.suffix == ".so" else ".so"  # CPython loads .so on mac too
    shutil.copy2(built, stage / f"trafficast_py{suffix}")
    sys.path.insert(0, str(stage))
    import trafficast_py

    return trafficast_py


def synthetic_series(n=800):
    values = []
    ar = 0.0
    # Deterministic pseudo-noise so the smoke test is reproducible.
    state = 12345
    for t in range(n):
        state = (state * 6364136223846793005 + 1442695040888963407) % 2**64
        eps = ((state >> 11) / 2**53 - 0.5) * 4.0
        ar = 0.8 * ar + eps
        values.append(100.0 + 60.0 * math.sin(2 * math.pi * t / 96.0) + ar)
    return values


def main():
    tc = import_module()
    print(f"imported trafficast_py {tc.__version__}")

    values = synthetic_series()
    model = tc.Forecaster(
        model="lstm", hidden=[8, 4], epochs=4, learning_rate=0.01,
        dropout=0.0, seed=7,
    )
    history = model.fit(values)
    assert len(history) >= 1
    first_loss, last_loss = history[0][1], history[-1][1]
    assert last_loss < first_loss, f"training loss did not improve: {history}"
    print(f"fit: {len(history)} epochs, train loss {first_loss:.4f} -> {last_loss:.4f}")
    assert model.best_epoch is not None

    report = model.evaluate("test")
    assert abs(report["rmse"] - math.sqrt(report["mse"])) < 1e-12
    assert report["mae"] <= report["rmse"] + 1e-12
    print(f"evaluate: test MSE {report['mse']:.5f} (n={int(report['n'])})")

    preds = model.predict(values[-12:], horizon=3)
    assert len(preds) == 3
    assert all(math.isfinite(p) for p in preds)
    print(f"predict: next 3 bins {[round(p, 2) for p in preds]}")

    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "model.tfck"
        model.save(path)
        loaded = tc.Forecaster.load(path)
        preds2 = loaded.predict(values[-12:], horizon=3)
        assert preds == preds2, "loaded checkpoint must predict identically"
    print("save/load: round-trip predictions identical")

    vanish = tc.gradient_norm_profile("rnn", 0.5, 0.0, 30, 1)
    explode = tc.gradient_norm_profile("rnn", 1.5, 0.0, 30, 1)
    damped = tc.gradient_norm_profile("lstm", 1.5, 3.0, 30, 1)
    assert vanish[-1] / vanish[0] < 1e-3
    assert explode[-1] / explode[0] > 1e3
    assert 1e-3 <= damped[-1] / damped[0] <= 1e3
    print("gradient_norm_profile: vanishing/exploding/damped as expected")

    for layer in ("dense", "rnn", "lstm"):
        err = tc.gradient_check_max_error(layer, seed=0)
        assert err < 1e-4, f"{layer} gradient error {err}"
        print(f"gradient_check {layer}: max rel err {err:.2e}")

    m = tc.metrics([0.0, 2.0], [0.0, 0.0])
    assert m["mae"] == 1.0 and m["mse"] == 2.0
    print("metrics: arithmetic oracle holds")

    print("smoke test passed")


if __name__ == "__main__":
    main()
