"""Smoke test for the radiomap_py extension.

Build first with `cargo build -p radiomap-py --features extension-module`;
the script loads the library from target/ when the module is not installed.
"""

import importlib.machinery
import importlib.util
import json
import math
import pathlib
import random
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[3]


def load():
    try:
        import radiomap_py

        return radiomap_py
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libradiomap_py.so"
        if lib.exists():
            loader = importlib.machinery.ExtensionFileLoader("radiomap_py", str(lib))
            spec = importlib.util.spec_from_file_location("radiomap_py", lib, loader=loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit("radiomap_py not built")


rm = load()

SCENARIO = {
    "environment": {
        "transmitters": [{"location": [10.0, 12.0], "power_db": 0.0}],
        "path_loss_exponent": 2.0,
        "shadowing": {"sigma2_s": 0.0, "delta_c": 5.0},
        "fading": {"sigma2_f": 0.0},
        "seed": 3,
    },
    "grid": {"region": {"lower": [0.0, 0.0], "upper": [30.0, 30.0]}, "counts": [10, 10]},
}

with tempfile.TemporaryDirectory() as tmp:
    path = pathlib.Path(tmp) / "scenario.json"
    path.write_text(json.dumps(SCENARIO))
    scenario = rm.Scenario.load(str(path))

grid = scenario.grid
assert len(grid) == 100 and grid.counts == [10, 10]
real = scenario.realize()
truth = real.power_map()
assert truth.unit == "watts" and len(truth.values) == 100

rng = random.Random(0)
locs = [[30 * rng.random(), 30 * rng.random()] for _ in range(40)]
data = real.measure(locs, 0.0, 1)
assert len(data) == 40

ls = rm.fit_friis_ls(data, [[10.0, 12.0]], 2.0, real.distance_floor)
assert abs(ls.coefficients[0] - 1.0) < 1e-9, ls.coefficients

krr = rm.fit_krr(data.to_db(), 6.0, 1e-4)
assert krr.unit == "db"
assert math.isfinite(krr.to_grid_map(grid).mse(truth.to_db()))

krig = rm.fit_kriging(data.to_db(), 4.0, 5.0, mean=-20.0)
assert krig.unit == "db"

completed, converged = rm.complete(grid, data.to_db(), 1.0)
assert converged and completed.unit == "db"

fig = rm.figure("fig1", 0)
assert fig["test_mse"] is not None and len(fig["x"]) == len(fig["truth"])

try:
    rm.MeasurementSet([[0.0, 0.0]], [1.0, 2.0])
except rm.RadioMapError:
    pass
else:
    raise AssertionError("length mismatch accepted")

print("smoke test passed")
