"""Smoke test for the dmldroid extension module.

Build first:
    cargo build -p dmldroid-py --features extension-module --release
then run `python3 python/smoke_test.py`. The script imports an installed
`dmldroid` if there is one, else loads target/release/libdmldroid.so.
"""

import importlib.machinery
import importlib.util
import math
import sys
from pathlib import Path


def load():
    try:
        import dmldroid

        return dmldroid
    except ImportError:
        pass
    root = Path(__file__).resolve().parent.parent
    for name in ("libdmldroid.so", "libdmldroid.dylib", "dmldroid.dll"):
        lib = root / "target" / "release" / name
        if lib.exists():
            loader = importlib.machinery.ExtensionFileLoader("dmldroid", str(lib))
            spec = importlib.util.spec_from_loader("dmldroid", loader)
            mod = importlib.util.module_from_spec(spec)
            loader.exec_module(mod)
            return mod
    sys.exit("dmldroid extension not found; build it first (see docstring)")


def main():
    dm = load()

    d1 = dm.synth_digest(7, 10, 30)
    assert d1 == dm.synth_digest(7, 10, 30) and len(d1) == 64, d1
    assert d1 != dm.synth_digest(8, 10, 30)

    assert dm.entropy(bytes(100)) == 0.0
    assert abs(dm.entropy(bytes(range(256))) - 8.0) < 1e-12

    edges = [("a", "b"), ("b", "c"), ("c", "a"), ("c", "d")]
    cent = dm.centralities(edges)
    assert sorted(cent) == ["a", "b", "c", "d"]
    assert all(len(row) == 5 and all(math.isfinite(v) for v in row) for row in cent.values())
    comm, q = dm.communities(edges)
    assert set(comm) == set(cent) and -0.5 <= q <= 1.0

    acc, pre, rec, f1 = dm.metrics(8, 10, 2, 0)
    assert abs(acc - 0.9) < 1e-12 and abs(rec - 1.0) < 1e-12 and abs(pre - 0.8) < 1e-12

    try:
        dm.experiment("no_such_key = 1")
    except ValueError as e:
        assert "no_such_key" in str(e)
    else:
        raise AssertionError("unknown key accepted")

    rows = dm.experiment(
        "n_benign = 20\nn_malware = 40\nepochs = 1\nmodels = U1\nscenarios = original\n"
    )
    assert len(rows) == 1 and rows[0][:2] == ("original", "U1"), rows
    print("smoke test ok:", rows[0])


if __name__ == "__main__":
    main()
