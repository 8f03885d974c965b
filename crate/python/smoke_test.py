#!/usr/bin/env python3
"""Smoke test for the ads_py extension module.

Builds the cdylib if needed, loads it straight from the cargo target
directory, and runs a few cross-checks of the exposed engines.
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def load_module():
    candidates = [
        REPO / "target" / profile / name
        for profile in ("debug", "release")
        for name in ("libads_py.so", "ads_py.so", "libads_py.dylib")
    ]
    path = next((c for c in candidates if c.exists()), None)
    if path is None:
        subprocess.run(["cargo", "build", "-p", "ads-py"], cwd=REPO, check=True)
        path = next(c for c in candidates if c.exists())
    staging = Path(tempfile.mkdtemp(prefix="ads-py-"))
    shutil.copy(path, staging / "ads_py.so")
    sys.path.insert(0, str(staging))
    import ads_py

    return ads_py


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol


def main():
    ads = load_module()
    checks = []

    rows = [
        ("a1", [0.0, 0.0], "pos", "a"),
        ("a2", [0.2, 0.1], "pos", "a"),
        ("b1", [4.0, 4.0], "neg", "b"),
        ("c1", [0.1, 0.0], "pos", "c"),
        ("d1", [4.1, 3.9], "neg", "d"),
    ]
    test = [
        ("t1", [0.0, 0.1], "pos"),
        ("t2", [4.0, 4.1], "neg"),
        ("t3", [0.3, 0.2], "pos"),
    ]
    ownership = {"a": "alice", "b": "bob", "c": "carol", "d": "bob"}
    dataset = ads.Dataset(rows, ownership)
    checks.append(("dataset shape", dataset.num_sources() == 4 and dataset.num_instances() == 5))

    groups = [["a", "b"], ["c", "d"]]
    perm = ads.exact_ads_permutation(dataset, groups, "one-nn", test=test)
    sub = ads.exact_ads_subset(dataset, groups, "one-nn", test=test)
    diff = max(abs(perm.per_source[s] - sub.per_source[s]) for s in perm.per_source)
    checks.append(("permutation vs subset oracle", diff <= 1e-12))
    checks.append(("residuals", max(perm.group_residuals) <= 1e-10))
    checks.append(
        (
            "contributor totals",
            close(
                perm.per_contributor["bob"],
                perm.per_source["b"] + perm.per_source["d"],
            ),
        )
    )

    single = ads.exact_ads_permutation(dataset, [["a", "b", "c", "d"]], "one-nn", test=test)
    ds = ads.exact_ds(dataset, "one-nn", test=test)
    diff = max(abs(single.per_source[s] - ds.per_source[s]) for s in ds.per_source)
    checks.append(("single group reduces to classical", diff <= 1e-12))

    checks.append(("sample size formula", ads.required_sample_size(10, 0.1, 0.1) == 265))
    mc = ads.mc_ads(dataset, groups, "one-nn", epsilon=0.2, delta=0.2, seed=9, test=test)
    mc_again = ads.mc_ads(dataset, groups, "one-nn", epsilon=0.2, delta=0.2, seed=9, test=test)
    checks.append(("mc determinism", mc.per_source == mc_again.per_source))
    checks.append(("mc efficiency", close(mc.total(), perm.total(), 1e-10)))

    dup_rows = [
        ("near", [0.0, 0.0], "pos", "orig"),
        ("copy", [0.0, 0.0], "pos", "dup"),
    ]
    knn = ads.knn_ads(
        ads.Dataset(dup_rows),
        [["orig"], ["dup"]],
        [("t", [0.1, 0.1], "pos")],
        k=1,
    )
    checks.append(
        ("knn duplicate worthless", knn.per_source["dup"] == 0.0 and knn.per_source["orig"] == 1.0)
    )

    votes = ads.Dataset([(f"z{i}", [], "+1", f"z{i}") for i in range(3)])
    wr = ads.within_round_values(votes, [["z0"], ["z1"], ["z2"]], "sign-vote")
    checks.append(("sign-vote rounds", wr.per_source["z0"] == 1.0 and wr.per_source["z2"] == 0.0))

    v_all = ads.evaluate_utility(dataset, ["a", "b", "c", "d"], "one-nn", test=test)
    checks.append(("utility evaluation", close(perm.total(), v_all, 1e-12)))

    try:
        ads.Dataset([("x", [0.0], "pos", "s"), ("y", [0.0, 1.0], "pos", "s")])
        checks.append(("dimension validation", False))
    except ValueError as err:
        checks.append(("dimension validation", "DIMENSION_MISMATCH" in str(err)))

    failed = 0
    for name, ok in checks:
        print(f"{'pass' if ok else 'FAIL'}  {name}")
        failed += 0 if ok else 1
    if failed:
        print(f"{failed} check(s) failed")
        return 1
    print(f"all {len(checks)} checks passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
