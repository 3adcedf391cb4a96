"""Smoke test for the mvcn extension module.

Build first with `cargo build --release -p mvcn-py`; the script copies the
shared library next to itself as mvcn.so and imports it.
"""

import json
import math
import pathlib
import shutil
import sys

HERE = pathlib.Path(__file__).resolve().parent
LIB = HERE.parent / "target" / "release" / "libmvcn.so"


def load():
    if LIB.exists():
        shutil.copyfile(LIB, HERE / "mvcn.so")
    sys.path.insert(0, str(HERE))
    import mvcn

    return mvcn


def main():
    mvcn = load()

    flat = mvcn.Potential.quadratic([0.0])
    m = mvcn.Metric(flat, 1.0)
    assert abs(m.r0) < 1e-6 and abs(m.r1 - 2.0) < 1e-6
    assert abs(m.ell - 0.5) < 1e-6
    assert abs(m.f(2.0) - 5.0 / 3.0) < 1e-6
    assert abs(m.rate_c() - 0.5) < 1e-6

    dw = mvcn.Potential.double_well()
    m3 = mvcn.Metric(dw, 3.0)
    assert abs(m3.rate_c(0.05) - 0.7413) < 1e-3
    t = mvcn.sigma0_threshold(dw, 0.05, 0.3, 10.0)
    assert t is not None and 1.2 < t < 1.35

    a = [0.0, 1.0, 2.0, 3.0]
    b = [3.5, 0.5, 2.5, 1.5]
    assert abs(mvcn.wasserstein_1d(a, b, 2) - 0.5) < 1e-12
    assert abs(mvcn.w2(a, b) - 0.5) < 1e-12
    assert mvcn.assignment([[4.0, 1.0], [2.0, 8.0]]) == [1, 0]

    ts = [0.1 * k for k in range(100)]
    fit = json.loads(mvcn.fit_rate(ts, [math.exp(-0.7 * x) for x in ts], 0.0))
    assert abs(fit["rate"] - 0.7) < 1e-9

    try:
        import jsonschema
    except ImportError:
        jsonschema = None
    if jsonschema is not None:
        schema = json.loads((HERE.parent / "schema" / "config.schema.json").read_text())
        for name in mvcn.PRESETS:
            if name not in ("chaos_scaling", "p6_threshold"):
                jsonschema.validate(json.loads(mvcn.preset_config(name)), schema)

    cfg = json.loads(mvcn.preset_config("t2_convex"))
    cfg.update(n=50, aux_size=50, realizations=4, t_final=1.0, checks=[])
    out = json.loads(mvcn.run_config(json.dumps(cfg)))
    assert out["name"] == "t2_convex"

    print("smoke test ok:", sorted(mvcn.PRESETS))


if __name__ == "__main__":
    main()
