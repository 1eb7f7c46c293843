#!/usr/bin/env python3
"""Smoke test for the ikm_py extension module.

Builds nothing itself: it locates the compiled cdylib under target/ (release
preferred), exposes it as an importable module and exercises the bound API.

Run from the repository root:
    cargo build -p ikm-py --release
    python3 python/smoke_test.py
"""

import math
import os
import shutil
import sys
import tempfile


def import_ikm_py():
    try:
        import ikm_py  # already installed

        return ikm_py
    except ImportError:
        pass
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    candidates = [
        os.path.join(root, "target", profile, name)
        for profile in ("release", "debug")
        for name in ("libikm_py.so", "ikm_py.so", "libikm_py.dylib")
    ]
    for cand in candidates:
        if os.path.exists(cand):
            stage = tempfile.mkdtemp(prefix="ikm_py_")
            shutil.copy(cand, os.path.join(stage, "ikm_py.so"))
            sys.path.insert(0, stage)
            import ikm_py

            return ikm_py
    sys.exit("ikm_py cdylib not found; run: cargo build -p ikm-py --release")


def main():
    ikm_py = import_ikm_py()

    # accounting: modulation must not add parameters
    kwargs = dict(n_blocks=1, depths=[2, 2], growth=4, channels=8, scale=2)
    p_plain = ikm_py.params_for(mode="vanilla", **kwargs)
    p_mod = ikm_py.params_for(mode="iso", **kwargs)
    assert p_plain == p_mod, (p_plain, p_mod)
    assert ikm_py.flops_for(out_h=24, out_w=24, **kwargs) > 0

    # model: construction, inventory, forward shape
    model = ikm_py.Model(seed=3, mode="iso", **kwargs)
    assert model.param_count() == p_mod
    names = model.param_names()
    assert len(names) == len(set(names)) and any(n.endswith(".w") for n in names)
    b, c, h, w = 2, 3, 16, 16
    x = [0.05 * ((i * 37) % 19 - 9) for i in range(b * c * h * w)]
    y, shape = model.forward(x, [b, c, h, w])
    assert shape == [b, c, 2 * h, 2 * w], shape
    assert len(y) == b * c * 4 * h * w
    assert all(math.isfinite(v) for v in y)
    assert "Model(" in repr(model)

    # attention: values in (1,2); uniform input collapses to exactly 1.5
    a, ashape = ikm_py.attention([0.7] * (1 * 2 * 9 * 9), [1, 2, 9, 9], kernel=3)
    assert ashape == [1, 2, 3, 3]
    assert all(v == 1.5 for v in a)
    mixed = [((i * 29) % 13) / 13.0 - 0.4 for i in range(2 * 2 * 9 * 9)]
    a, _ = ikm_py.attention(mixed, [2, 2, 9, 9], kernel=3)
    assert all(1.0 < v < 2.0 for v in a)

    # errors surface as Python exceptions
    try:
        ikm_py.Model(n_blocks=1, depths=[2, 1], growth=4, channels=8, scale=2)
    except ValueError:
        pass
    else:
        raise AssertionError("asymmetric depths should be rejected")

    print("smoke test: all checks passed")


if __name__ == "__main__":
    main()
