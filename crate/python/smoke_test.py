"""Smoke test for the collapse_lab_py extension.

Uses an installed module if there is one; otherwise builds the cdylib with
cargo and imports it from a temporary directory.
"""

import json
import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load():
    try:
        import collapse_lab_py

        return collapse_lab_py
    except ImportError:
        pass
    subprocess.run(
        ["cargo", "build", "--release", "-p", "collapse-lab-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    lib = ROOT / "target" / "release" / "libcollapse_lab_py.so"
    tmp = Path(tempfile.mkdtemp())
    shutil.copy(lib, tmp / "collapse_lab_py.so")
    sys.path.insert(0, str(tmp))
    import collapse_lab_py

    return collapse_lab_py


def main():
    cl = load()

    e1 = cl.Matrix([[1, 0], [1, 0], [0, 1], [0, 1]])
    e2 = cl.Matrix([[1, 0], [0, 1], [1, 0], [0, 1]])
    assert e1.shape == (4, 2)
    assert abs(cl.information_abundance(e1) - 2.0) < 1e-9
    assert abs(cl.diversity(e1, e1)) < 1e-9
    assert abs(cl.diversity(e1, e2) - 0.5) < 1e-9
    cos = cl.principal_angle_cosines(e1, e2)
    assert all(abs(a - b) < 1e-9 for a, b in zip(sorted(cos), [0.0, 1.0]))
    cat = cl.Matrix([a + b for a, b in zip(e1.tolist(), e2.tolist())])
    assert abs(cat.information_abundance() - (1 + math.sqrt(2))) < 1e-9
    assert abs(cl.normalized_ia(e1) - 1.0) < 1e-9

    u, s, v = cat.svd()
    assert len(s) == 4 and s == sorted(s, reverse=True)
    assert u.shape == (4, 4) and v.shape == (4, 4)

    assert cl.auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    try:
        cl.auc([0.1, 0.2], [1, 1])
    except ValueError:
        pass
    else:
        raise AssertionError("single-class auc should raise")

    ds = cl.gen_toy(3, 0)
    assert ds["cardinalities"] == [100, 100, 3]
    assert len(ds["indices"]) == len(ds["labels"]) > 0

    traj = cl.run_toy(3, 200, 0)
    assert traj[0][0] == 0 and traj[-1][0] == 200

    cfg = {
        "data": {"cardinalities": [4, 5, 6, 7], "pattern": {"n_rows": 800}},
        "model": {"interaction": "dcnv2", "embedding_size": 4, "num_sets": 2, "mlp": [8]},
        "train": {"batch_size": 128, "max_epochs": 1},
    }
    a = cl.train_config(json.dumps(cfg))
    b = cl.train_config(json.dumps(cfg))
    assert a == b, "training is not deterministic"
    assert len(a["report"]["ia_per_field"]) == 4
    assert 0.0 <= a["record"]["test_auc"] <= 1.0

    try:
        cl.train_config(json.dumps({"model": {"embeding_size": 4}}))
    except ValueError as err:
        assert "embeding_size" in str(err)
    else:
        raise AssertionError("unknown config key should raise")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
