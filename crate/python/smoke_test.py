"""Smoke test for the nls_py extension.

Build and install first:
    pip install maturin
    cd crates/py && maturin build --release -o dist && pip install dist/*.whl
then run `python python/smoke_test.py`.
"""

import json
import math

import nls_py


def check(name, ok, detail=""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name} {detail}")
    return ok


def main():
    results = []

    ev, exact = nls_py.spectrum(q=1.0, half_width=40.0, nodes=8001)
    results.append(check("ground eigenvalue", abs(ev - exact) < 5e-3, f"{ev:.8f} vs {exact}"))

    fam = nls_py.BoundStateFamily(p=1.0, lam=-1.0, q=1.0, half_width=30.0, nodes=601)
    q, e = fam.bound_state(0.1 + 0.05j)
    res = fam.standing_wave_residual(0.1 + 0.05j)
    results.append(check("standing-wave residual", res < 1e-9, f"{res:.2e}, E = {e:.6f}"))

    # bound state plus a small continuous-spectrum bump, split both ways
    x = fam.nodes()
    bump = fam.continuous_part([0.01 * math.exp(-((t - 3.0) ** 2)) * complex(math.cos(t), math.sin(t)) for t in x])
    for conv in ("pc", "hc"):
        u = fam.compose(0.1 + 0.05j, bump, conv)
        z, rem = fam.decompose(u, conv)
        results.append(check(f"{conv} round trip", abs(z - (0.1 + 0.05j)) < 1e-9, f"|dz| = {abs(z - (0.1 + 0.05j)):.1e}"))

    gap = nls_py.commutator_gap(bump, a=8.0, half_width=30.0)
    results.append(check("commutator identity", gap < 1e-3, f"gap = {gap:.2e}"))

    cfg = json.loads(nls_py.default_config())
    cfg["grid"] = {"L": 30, "N": 601}
    cfg["evo"]["T"] = 10
    report = json.loads(nls_py.run_experiment("residuals", json.dumps(cfg)))
    results.append(check("residuals report", report["experiment"] == "residuals", f"passed = {report['passed']}"))

    csv = nls_py.evolve(0.05, json.dumps(cfg), "pc")
    header = csv.splitlines()[1]
    results.append(check("trajectory csv", header.startswith("t,mass,energy"), f"{len(csv.splitlines()) - 2} rows"))

    try:
        nls_py.BoundStateFamily(p=1.0, lam=-1.0, nodes=600)
        results.append(check("even node count rejected", False))
    except nls_py.NlsError as e:
        results.append(check("even node count rejected", True, f"({e})"))

    if not all(results):
        raise SystemExit(1)
    print("smoke test passed")


if __name__ == "__main__":
    main()
