#!/usr/bin/env python3
"""Smoke test for the ``pevo_py`` extension module.

Builds the extension with cargo (unless ``--no-build``), copies the shared
library next to a temporary import path and exercises the main entry points:
grid operations, presets and the condition checker, tuning and the transform,
linear and Newton solves, and the configuration pipeline.

    python3 python/smoke_test.py
"""

import argparse
import cmath
import importlib
import json
import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build_and_locate(build: bool) -> Path:
    if build:
        subprocess.run(
            ["cargo", "build", "-p", "pevo-py", "--features", "extension-module"],
            cwd=ROOT,
            check=True,
        )
    suffix = {"darwin": "dylib", "win32": "dll"}.get(sys.platform, "so")
    prefix = "" if sys.platform == "win32" else "lib"
    lib = ROOT / "target" / "debug" / f"{prefix}pevo_py.{suffix}"
    if not lib.exists():
        sys.exit(f"extension library not found at {lib}")
    return lib


def load(lib: Path, where: Path):
    ext = ".pyd" if sys.platform == "win32" else ".so"
    shutil.copy(lib, where / f"pevo_py{ext}")
    sys.path.insert(0, str(where))
    return importlib.import_module("pevo_py")


def check(cond: bool, what: str) -> None:
    print(("ok   " if cond else "FAIL ") + what)
    if not cond:
        sys.exit(1)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--no-build", action="store_true", help="use the library already in target/debug")
    args = parser.parse_args()
    lib = build_and_locate(not args.no_build)

    with tempfile.TemporaryDirectory() as tmp:
        pv = load(lib, Path(tmp))

        g = pv.Grid(64, math.pi)
        u = [cmath.exp(5j * x) for x in g.x()]
        err = max(abs(a - 5 * b) for a, b in zip(g.derivative(u, 1), u))
        check(err < 1e-10, f"spectral derivative of e^(5ix) (error {err:.1e})")

        g = pv.Grid(64, 10.0)
        good = pv.Coefficients.preset("decaying_im", g)
        bad = pv.Coefficients.preset("constant_im", g)
        passes = lambda c: all(v["pass"] for v in c.check(10.0)["conditions"])
        check(passes(good) and not passes(bad), "condition checker separates decaying and constant Im a_{p-1}")

        # N = 128 resolves the carrier-10 packet (xi_max = 6.4 pi)
        g = pv.Grid(128, 10.0)
        sponge = (5.0, 0.6, 0.75)
        pack, report = pv.tune(good, g, layer=sponge)
        check(pack.neumann_norm() <= 0.5, f"tuned pack: M={pack.m}, h={pack.h}, |r|={pack.neumann_norm():.3f}")
        u0 = [cmath.exp(10j * x - 2 * (x + 4) ** 2) for x in g.x()]
        v, w = pv.solve_transformed(good, g, pack, u0, 0.05, dt=2e-5, save_every=250, layer=sponge)
        norms = w.l2_norms()
        check(max(norms) <= norms[0] * (1 + 1e-6), f"transformed energy is non-increasing ({norms[0]:.4f} -> {norms[-1]:.4f})")

        g = pv.Grid(128, 40.0)
        kdv = pv.Coefficients.preset("kdv", g)
        u0 = [0.05 * math.exp(-(x / 3) ** 2) + 0j for x in g.x()]
        _, rep = pv.newton_solve(kdv, g, u0, 0.05, 1e-3)
        check(rep["converged"], f"KdV Newton solve converged in {len(rep['iterations']) - 1} iteration(s)")

        cfg = pv.golden_config()
        try:
            import jsonschema
        except ImportError:
            print("skip schema validation (jsonschema not installed)")
        else:
            validator = jsonschema.Draft202012Validator(pv.config_schema())
            shipped = sorted(p for p in (ROOT / "configs").glob("*.json") if not p.name.endswith(".schema.json"))
            bad = [p.name for p in shipped if list(validator.iter_errors(json.loads(p.read_text())))]
            check(not bad, f"{len(shipped)} shipped configs validate against the schema {bad or ''}")
            typo = json.loads(cfg)
            typo["solver"]["stepsize"] = 1e-3
            check(not validator.is_valid(typo), "schema rejects unknown fields")
        code, failure = pv.run_pipeline(cfg, "pipeline", str(Path(tmp) / "golden"))
        check(code == 0 and failure is None, "golden pipeline exits 0")
        broken = json.loads(cfg)
        broken["scenario"]["preset"] = "constant_im"
        code, failure = pv.run_pipeline(json.dumps(broken), "check")
        check(code == 3, f"constant Im a_(p-1) exits {code}: {failure['message']}")

    print("smoke test passed")


if __name__ == "__main__":
    main()
