"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see every line.  The
mean-square criterion (08b) is implemented exactly as stated and is expected
to fail for a documented mathematical reason (the example system is stable
in probability but not mean-square stable; the typical path decays while
the squared-norm average is dominated by rare volatile paths).  It is
marked as a strict expected failure so the analysis is visible without
masking the outcome; the median-based decay on the same data is asserted
alongside.
"""

import json
import math
import time

import numpy as np
import pytest

from zenosde.analysis import (
    detect_blowup,
    probe_mean_square,
    probe_supermartingale,
    verify_segment_moment_bound,
)
from zenosde.lyapunov import (
    LyapunovSpec,
    check_jump_moment_condition,
    linear_stability_check,
    wio_evaluate,
    wio_finite_difference_battery,
)
from zenosde.simulate import IntegratorConfig, RngPolicy, simulate_ensemble, simulate_path
from zenosde.system import spec_from_dict, tail_cutoff_index
from zenosde.cli import EXIT_FINDING, EXIT_OK, build_preset, main

from test_lyapunov import U_X4, U_YX2, X2

SEED = 20250809


def report(tag: str, ok: bool, detail: str = "", elapsed: float | None = None) -> None:
    t = "" if elapsed is None else f" [{elapsed:.1f}s]"
    print(f"\n[criterion {tag}] {'PASS' if ok else 'FAIL'}{t} {detail}")


def test_criterion_01_stability_arithmetic_exact(capsys):
    t0 = time.time()
    rep1 = linear_stability_check(spec_from_dict(build_preset("case1")), epsilon=0.1)
    rep2 = linear_stability_check(spec_from_dict(build_preset("case2")), epsilon=0.1)
    checks = [
        abs(rep1.rows[0].drift_margin - 0.955) <= 1e-9,
        not rep1.overall_ok,
        abs(rep2.rows[0].drift_margin - (-1.045)) <= 1e-9,
        abs(rep2.rows[1].drift_margin - (-1.5)) <= 1e-9,
        abs(rep2.beta - 0.025) <= 1e-9,
        abs(rep2.rows[0].growth_rhs - 1.00125) <= 1e-9,
        abs(rep2.rows[1].growth_rhs - 2.0025) <= 1e-9,
        rep2.overall_ok,
        main(["check", "--preset", "case1", "--epsilon", "0.1"]) == EXIT_FINDING,
        main(["check", "--preset", "case2", "--epsilon", "0.1"]) == EXIT_OK,
    ]
    elapsed = time.time() - t0
    with capsys.disabled():
        report("01 closed-form test arithmetic", all(checks) and elapsed < 1.0,
               f"margins ({rep1.rows[0].drift_margin}, {rep2.rows[0].drift_margin}, "
               f"{rep2.rows[1].drift_margin}), beta {rep2.beta}", elapsed)
    assert all(checks)
    assert elapsed < 1.0


def test_criterion_02_jump_moment_condition(capsys):
    t0 = time.time()
    grid = np.logspace(-3.0, 3.0, 61)
    spec2 = spec_from_dict(build_preset("case2"))
    spec3 = spec_from_dict(build_preset("case3"))
    rep2 = check_jump_moment_condition(spec2.jump, spec2.eta_chain, 0.025, 200, grid)
    rep3 = check_jump_moment_condition(spec3.jump, spec3.eta_chain, 0.025, 200, grid)
    ok = rep2.ok and not rep3.ok and rep3.witness is not None
    elapsed = time.time() - t0
    with capsys.disabled():
        report("02 impulse moment condition", ok and elapsed < 5.0,
               f"case2 worst ratio {rep2.worst_ratio:.6f}; case3 witness "
               f"k={rep3.witness[0]} h={rep3.witness[1]} x={rep3.witness[2]:g}", elapsed)
    assert ok
    assert elapsed < 5.0


def test_criterion_03_integrator_second_moment(capsys):
    t0 = time.time()
    cfg = {
        "drift": {"kind": "linear-per-regime", "values": [-1.0]},
        "diffusion": {"kind": "linear-per-regime", "values": [0.3]},
        "jump": {"kind": "zero"},
        "schedule": {"kind": "explicit-list", "times": []},
        "xi_generator": {"q": [[0.0]]},
        "eta_transition": {"p": [[1.0]]},
        "initial": {"x0": [1.0], "y0": 1, "h0": 1},
        "horizon": 1.0,
    }
    spec = spec_from_dict(cfg)
    summary = simulate_ensemble(spec, IntegratorConfig(dt_max=1e-3), 1.0, 100_000,
                                RngPolicy(SEED), record_times=np.array([1.0]))
    est, se = float(summary.mean_sq[0]), float(summary.stderr[0])
    target = math.exp(-1.91)
    rel = abs(est - target) / target
    ok = rel < 0.02 and abs(est - target) < 3.0 * se
    elapsed = time.time() - t0
    with capsys.disabled():
        report("03 integrator second-moment oracle", ok and elapsed < 60.0,
               f"estimate {est:.6f} vs {target:.6f} (rel {rel:.4%}, se {se:.2g})", elapsed)
    assert ok
    assert elapsed < 60.0


def test_criterion_04_segment_moment_bound(capsys):
    t0 = time.time()
    spec = spec_from_dict(build_preset("case2"))
    res = verify_segment_moment_bound(spec, 1, 10_000, RngPolicy(SEED))
    elapsed = time.time() - t0
    ok = res.ok
    with capsys.disabled():
        report("04 segment sup-moment bound", ok and elapsed < 60.0,
               f"lhs CI upper {res.lhs_ci_upper:.4g} <= rhs {res.rhs:.4g}", elapsed)
    assert ok
    assert elapsed < 60.0


def test_criterion_05_supermartingale_probe(capsys):
    t0 = time.time()
    spec = spec_from_dict(build_preset("case2"))
    v = LyapunovSpec(kind="power", gamma=1.0, beta=0.025)
    res = probe_supermartingale(spec, v, range(1, 21), 1000, 100, RngPolicy(SEED))
    elapsed = time.time() - t0
    worst = max(res.rows, key=lambda r: r["diff"] - 3.0 * r["diff_stderr"])
    with capsys.disabled():
        report("05 skeleton supermartingale probe", res.verdict and elapsed < 300.0,
               f"all 20 segments pass; worst k={worst['k']} diff {worst['diff']:+.5f} "
               f"(3se {3 * worst['diff_stderr']:.5f})", elapsed)
    assert res.verdict
    assert elapsed < 300.0


def test_criterion_06_wio_against_oracle(capsys):
    t0 = time.time()
    spec_hand = spec_from_dict({
        "drift": {"kind": "linear-per-regime", "values": [-1.0]},
        "diffusion": {"kind": "linear-per-regime", "values": [0.3]},
        "jump": {"kind": "zero"},
        "schedule": {"kind": "explicit-list", "times": []},
        "xi_generator": {"q": [[0.0]]},
        "eta_transition": {"p": [[1.0]]},
        "initial": {"x0": [1.0], "y0": 1, "h0": 1},
        "horizon": 1.0,
    })
    hand = wio_evaluate(spec_hand, X2, 0.25, 1, 1, np.array([2.0]))
    hand_ok = abs(hand - (-7.64)) <= 1e-9

    spec = spec_from_dict(build_preset("case2"))
    rng = np.random.default_rng(SEED)
    battery = [X2, U_X4, U_YX2]
    worst_ratio = 0.0
    agree = True
    for point in range(10):
        y = int(rng.integers(1, 3))
        x = np.array([float(rng.uniform(0.8, 2.5))])
        results = wio_finite_difference_battery(
            spec, battery, 0.3, y, 1, x, mc=20_000_000, dt=2e-4,
            policy=RngPolicy(SEED), key=point,
        )
        for u, (est, se) in zip(battery, results):
            exact = wio_evaluate(spec, u, 0.3, y, 1, x)
            tol = max(3.0 * se, 0.05 * abs(exact))
            worst_ratio = max(worst_ratio, abs(est - exact) / tol)
            agree = agree and abs(est - exact) <= tol
    elapsed = time.time() - t0
    ok = hand_ok and agree
    with capsys.disabled():
        report("06 weak generator vs finite differences", ok and elapsed < 120.0,
               f"hand value {hand!r}; 30 comparisons, worst |err|/tol {worst_ratio:.2f}", elapsed)
    assert ok
    assert elapsed < 120.0


def test_criterion_07_tail_cutoff_index(capsys):
    t0 = time.time()
    gamma = lambda m: 2.0 ** (-m)
    n_eps = tail_cutoff_index(gamma, 0.1)
    grid = [10.0 ** (-e) for e in np.linspace(0, 6, 13)]
    cuts = [tail_cutoff_index(gamma, eps) for eps in grid]
    ok = n_eps == 5 and all(b >= a for a, b in zip(cuts, cuts[1:]))
    elapsed = time.time() - t0
    with capsys.disabled():
        report("07 tail cutoff index", ok and elapsed < 1.0,
               f"N(0.1) = {n_eps}; nonincreasing in eps over {len(grid)} grid points", elapsed)
    assert ok
    assert elapsed < 1.0


def test_criterion_08a_case1_growth(capsys):
    t0 = time.time()
    spec = spec_from_dict(build_preset("case1"))
    summary = simulate_ensemble(spec, IntegratorConfig(), 1.99, 100, RngPolicy(SEED),
                                record_times=np.array([1.99]))
    med_sup_sq = float(np.median(summary.sup_norms ** 2))
    x0_sq = float(spec.x0 @ spec.x0)
    # "10 x x0" in the squared-norm convention the toolkit reports throughout
    ok = med_sup_sq > 10.0 * x0_sq
    elapsed = time.time() - t0
    with capsys.disabled():
        report("08a unstable-case growth", ok,
               f"median sup^2 {med_sup_sq:.0f} > 10 |x0|^2 = {10 * x0_sq:.0f}", elapsed)
    assert ok


@pytest.mark.xfail(
    strict=True,
    reason="the example system is not mean-square stable: the squared-norm "
    "average grows exponentially (the paired moments E[x^2; regime i] obey "
    "m' = [[-2.91, 1], [1, 4]] m with top eigenvalue +4.14, since regime 2 "
    "has 2a + b^2 = 5 against unit switching rate), so the stated mean decay "
    "cannot hold for any seed. The typical path does decay; the median-based "
    "check on the same data is test_criterion_08b_median_decay_supplement.",
)
def test_criterion_08b_case2_mean_square_decay(capsys):
    t0 = time.time()
    spec = spec_from_dict(build_preset("case2"))
    res = probe_mean_square(spec, [0.5, 1.0, 2.0, 3.0, 5.0], 1000, RngPolicy(SEED))
    first, last = res.rows[0], res.rows[-1]
    elapsed = time.time() - t0
    with capsys.disabled():
        report("08b stable-case mean-square decay", res.verdict,
               f"mean_sq t=0.5: {first['mean_sq']:.3g} (se {first['stderr']:.2g}), "
               f"t=5: {last['mean_sq']:.3g} (se {last['stderr']:.2g})", elapsed)
    assert res.verdict


def test_criterion_08b_median_decay_supplement(capsys):
    t0 = time.time()
    spec = spec_from_dict(build_preset("case2"))
    res = probe_mean_square(spec, [0.5, 1.0, 2.0, 3.0, 5.0], 1000, RngPolicy(SEED))
    first, last = res.rows[0], res.rows[-1]
    ok = last["median_sq"] < 1e-3 * first["median_sq"]
    elapsed = time.time() - t0
    with capsys.disabled():
        report("08b-supplement typical-path decay", ok,
               f"median_sq t=0.5: {first['median_sq']:.3g} -> t=5: {last['median_sq']:.3g}",
               elapsed)
    assert ok


def test_criterion_08c_case3_explosion_fraction(capsys):
    t0 = time.time()
    cfg = build_preset("case3")
    cfg["schedule"]["k_max"] = 100
    spec = spec_from_dict(cfg)
    summary = simulate_ensemble(spec, IntegratorConfig(), 2.0, 200, RngPolicy(SEED),
                                record_times=np.array([2.0]))
    frac = summary.n_exploded / summary.n_paths
    ok = frac >= 0.9
    elapsed = time.time() - t0
    with capsys.disabled():
        report("08c growing-impulse explosion", ok,
               f"exploded fraction {frac:.3f} by t=2 at truncation depth 100", elapsed)
    assert ok


def test_criterion_09_intro_blowup(capsys):
    t0 = time.time()
    spec = spec_from_dict(build_preset("intro"))
    res = detect_blowup(spec, [5, 10, 20], 1.2, 5, RngPolicy(SEED))
    meds = [r["median_sup"] for r in res.rows]
    increasing = meds[0] < meds[1] < meds[2]

    cfg = build_preset("intro")
    cfg["drift"]["values"] = [0.0]
    cfg["schedule"]["k_max"] = 3
    pure = spec_from_dict(cfg)
    traj = simulate_path(pure, IntegratorConfig(), 1.0, 0, RngPolicy(SEED))
    factor = float(traj.state_at_end()[0] / pure.x0[0])
    ok = increasing and factor == 100.0
    elapsed = time.time() - t0
    with capsys.disabled():
        report("09 accumulating blow-up", ok and elapsed < 30.0,
               f"median sup {meds[0]:.3g} < {meds[1]:.3g} < {meds[2]:.3g}; "
               f"3-jump factor {factor}", elapsed)
    assert ok
    assert elapsed < 30.0


def test_criterion_10_determinism(tmp_path, capsys):
    t0 = time.time()
    outs = {}
    for threads in ("1", "3"):
        out = tmp_path / f"thr{threads}"
        code = main(["probe", "--preset", "case2", "--kind", "meansq", "--paths", "200",
                     "--grid", "0.5,1,2", "--seed", "17", "--threads", threads,
                     "--out", str(out)])
        assert code == EXIT_OK
        outs[threads] = out
    same_threads = (
        (outs["1"] / "meansq.csv").read_bytes() == (outs["3"] / "meansq.csv").read_bytes()
        and (outs["1"] / "meansq.json").read_bytes() == (outs["3"] / "meansq.json").read_bytes()
    )

    rerun_out = tmp_path / "rerun"
    assert main(["rerun", str(outs["1"] / "manifest.json"), "--out", str(rerun_out)]) == EXIT_OK
    same_rerun = all(
        (outs["1"] / name).read_bytes() == (rerun_out / name).read_bytes()
        for name in ("meansq.csv", "meansq.json")
    )

    def manifest_core(p):
        d = json.loads(p.read_text())
        d.pop("created_at")
        return d

    same_manifest = manifest_core(outs["1"] / "manifest.json") == manifest_core(rerun_out / "manifest.json")

    sim1 = tmp_path / "sim1"
    sim2 = tmp_path / "sim2"
    assert main(["simulate", "--preset", "case2", "--seed", "7", "--paths", "2",
                 "--horizon", "2.0", "--out", str(sim1)]) == EXIT_OK
    assert main(["rerun", str(sim1 / "manifest.json"), "--out", str(sim2)]) == EXIT_OK
    same_sim = all(
        (sim1 / f"traj_{i}.csv").read_bytes() == (sim2 / f"traj_{i}.csv").read_bytes()
        for i in range(2)
    )
    ok = same_threads and same_rerun and same_manifest and same_sim
    elapsed = time.time() - t0
    with capsys.disabled():
        report("10 manifest determinism", ok and elapsed < 120.0,
               "thread-count invariance, rerun byte-identity, manifest equality "
               "(timestamp aside)", elapsed)
    assert ok
    assert elapsed < 120.0
