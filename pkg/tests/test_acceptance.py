"""Acceptance gate: one test and one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they are
produced; they are repeated in the terminal summary either way.
"""
import contextlib
import time
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from boxlift.core import BOX, GravityVec
from boxlift.dmp_refine import CONVERGED, ExplorationState, cem_update, sample_candidates
from boxlift.estimator import (InertialEstimate, com_regression, estimate, estimate_mass, synthetic_batch)
from boxlift.friction import (ContactDecomposition, ContactPatch, FrictionParams, contract_friction_cone,
                              decompose, effective_radius, limit_surface_residual, limit_surface_residual_batch,
                              soc_feasible)
from boxlift.pipeline import lift_experiment, run_phase1, run_pipeline
from boxlift.wrench_opt import OPTIMAL, GraspGeometry, WrenchWeight, optimize_wrenches

from conftest import ACCEPTANCE, CONFIG1_ADDED, CONFIG2_ADDED, SCENARIOS
from oracles import cli_outputs, distribution_oracle, quadrature_radius

R_L = np.array([-0.15, 0.0, 0.0])
R_R = np.array([0.15, 0.0, 0.0])
N_L = np.array([-1.0, 0.0, 0.0])
N_R = np.array([1.0, 0.0, 0.0])
R_EFF = effective_radius(ContactPatch(0.07, 0.10))
FP = FrictionParams(0.4, 0.1, R_EFF)
GEO = GraspGeometry(R_L, R_R, N_L, N_R, FP, FP)
WEIGHT = WrenchWeight(R_EFF)
G = 9.81


@contextlib.contextmanager
def criterion(num, title, limit_s):
    """Time the block, check the runtime limit and record one PASS/FAIL line."""
    info = {"detail": ""}
    t0 = time.perf_counter()
    ok = False
    try:
        yield info
        ok = True
    finally:
        secs = time.perf_counter() - t0
        within = secs < limit_s
        passed = ok and within
        detail = info["detail"] + ("" if within else f" runtime {secs:.2f} s exceeds {limit_s} s")
        ACCEPTANCE.append((num, title, passed, detail.strip(), secs))
        print(f"\n[{'PASS' if passed else 'FAIL'}] {num}. {title} ({secs:.2f} s) {detail.strip()}")
    assert within, f"criterion {num} took {secs:.2f} s (limit {limit_s} s)"


def test_1_effective_radius():
    with criterion(1, "effective radius", 1.0) as c:
        r = effective_radius(ContactPatch(0.07, 0.10))
        q = quadrature_radius(0.07, 0.10)
        c["detail"] = f"R_eff = {r:.6f} m, quadrature rel. diff {abs(r - q) / r:.1e}"
        assert 0.0327 <= r <= 0.0329
        assert abs(r - q) <= 1e-6 * r


def test_2_mass_estimation():
    with criterion(2, "mass estimation", 1.0) as c:
        errs = []
        for seed in range(10):
            b = synthetic_batch(2.2, [0.0205, 0.0114, 0.0], R_L, R_R, M=50, seed=seed, sigma_f=0.05)
            errs.append(abs(estimate_mass(b) - 2.2) / 2.2)
        clean = abs(estimate_mass(synthetic_batch(2.2, [0.0205, 0.0114, 0.0], R_L, R_R)) - 2.2) / 2.2
        c["detail"] = f"worst noisy error {100 * max(errs):.4f}%, noise-free {clean:.1e}"
        assert max(errs) < 0.005
        assert clean <= 1e-6


def test_3_com_estimation():
    with criterion(3, "CoM estimation", 5.0) as c:
        worst_clean, worst_noisy = 0.0, 0.0
        for added, truth in ((CONFIG1_ADDED, (0.0205, 0.0114)), (CONFIG2_ADDED, (0.0068, -0.0114))):
            com = 0.5 * np.asarray(added) / 2.2  # base CoM at the centre
            assert np.allclose(com[:2], truth, atol=1e-12)
            est = estimate(synthetic_batch(2.2, com, R_L, R_R))
            assert est.r_com_hat[2] == 0.0
            assert est.observable_mask == (True, True, False)
            worst_clean = max(worst_clean, np.abs(est.r_com_hat[:2] - truth).max())
            for seed in range(10):
                b = synthetic_batch(2.2, com, R_L, R_R, M=50, seed=seed, sigma_f=0.05, sigma_tau=0.005)
                e = estimate(b)
                worst_noisy = max(worst_noisy, np.linalg.norm(e.r_com_hat[:2] - truth))
        c["detail"] = (f"noise-free error {1e3 * worst_clean:.2e} mm, worst noisy "
                       f"{1e3 * worst_noisy:.2f} mm ({100 * worst_noisy / 0.3:.2f}% of 300 mm)")
        assert worst_clean < 1e-4
        assert worst_noisy < 0.02 * 0.3


def test_4_socp_analytic_case():
    optimize_wrenches(GEO, InertialEstimate(2.2, np.zeros(3)), WEIGHT)  # warm-up import and caches
    with criterion(4, "SOCP analytic case", 10.0) as c:
        times = []
        for _ in range(20):
            s = optimize_wrenches(GEO, InertialEstimate(2.2, np.zeros(3)), WEIGHT)
            times.append(s.solve_time)
        assert s.status == OPTIMAL
        ft_expect = 2.2 * G / 2
        fn_expect = 2.2 * G / (2 * 0.4 * (1 - 0.1))
        worst_ft = worst_fn = 0.0
        for w, n in ((s.w_L, N_L), (s.w_R, N_R)):
            d = decompose(w, n)
            worst_ft = max(worst_ft, abs(np.linalg.norm(d.f_t) - ft_expect))
            worst_fn = max(worst_fn, abs(abs(d.f_n) - fn_expect))
        kkt = max(s.kkt_residuals.values())
        med = float(np.median(times))
        c["detail"] = (f"|f_t| err {worst_ft:.1e} N, |f_n| err {worst_fn:.1e} N, KKT {kkt:.1e}, "
                       f"median solve {1e3 * med:.2f} ms")
        assert worst_ft <= 1e-4
        assert worst_fn <= 1e-3
        assert kkt <= 1e-8
        assert med < 0.010


def test_5_socp_oracle_equivalence():
    rng = np.random.default_rng(2024)
    with criterion(5, "SOCP oracle equivalence", 60.0) as c:
        worst = np.inf
        for k in range(20):
            r = np.array([rng.uniform(-0.1, 0.1), rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08)])
            m = rng.uniform(1.0, 4.0)
            s = optimize_wrenches(GEO, InertialEstimate(m, r), WEIGHT)
            assert s.status == OPTIMAL
            best, n_ok = distribution_oracle(R_L, R_R, N_L, N_R, m, r, 0.4, 0.1, R_EFF, R_EFF, s.x_star.x,
                                             n_samples=10**6, seed=k)
            assert n_ok > 0
            worst = min(worst, best / s.t_star)
        c["detail"] = f"lowest oracle/solver cost ratio {worst:.6f}"
        assert worst >= 1 - 5e-3


def test_6_phase3_structure():
    with criterion(6, "wrench distribution structure", 5.0) as c:
        s = optimize_wrenches(GEO, InertialEstimate(2.2, [0.03, 0.0, 0.0]), WEIGHT)
        ftL = np.linalg.norm(decompose(s.w_L, N_L).f_t)
        ftR = np.linalg.norm(decompose(s.w_R, N_R).f_t)
        assert ftR > ftL
        flips = 0
        for ry in (0.01, 0.0114, 0.03, 0.05):
            a = optimize_wrenches(GEO, InertialEstimate(2.2, [0.02, ry, 0.0]), WEIGHT)
            b = optimize_wrenches(GEO, InertialEstimate(2.2, [0.02, -ry, 0.0]), WEIGHT)
            for n, wa, wb in ((N_L, a.w_L, b.w_L), (N_R, a.w_R, b.w_R)):
                ta, tb = decompose(wa, n).tau_n, decompose(wb, n).tau_n
                assert np.sign(ta) == -np.sign(tb) != 0
                flips += 1
        rng = np.random.default_rng(6)
        worst = -np.inf
        for _ in range(50):
            r = np.array([rng.uniform(-0.1, 0.1), rng.uniform(-0.08, 0.08), 0.0])
            sol = optimize_wrenches(GEO, InertialEstimate(rng.uniform(1, 4), r), WEIGHT)
            for w, n in ((sol.w_L, N_L), (sol.w_R, N_R)):
                worst = max(worst, limit_surface_residual(decompose(w, n), FP))
        c["detail"] = f"|f_t| L {ftL:.3f} < R {ftR:.3f} N, {flips} sign flips, worst residual {worst:.1e}"
        assert worst <= 0


def test_7_trajectory_refinement(config1, config2):
    with criterion(7, "trajectory refinement", 300.0) as c:
        clip = run_phase1(config1)
        clear = run_phase1(config2)
        c["detail"] = (f"clip: J2 {clip.nominal[2]:.4g} -> {clip.best[2]:.4g} "
                       f"({100 * clip.J2_reduction:.2f}% less), J1 {clip.nominal[1]:.4g} -> {clip.best[1]:.4g}, "
                       f"{clip.iterations} iterations; clear: J2 = {clear.best[2]:g}")
        assert clip.status == CONVERGED
        assert clip.J2_reduction >= 0.9
        assert clip.best[1] <= 3 * clip.nominal[1]
        assert clear.status == CONVERGED and clear.best[2] == 0.0


def test_8_closed_loop(config1, config2):
    with criterion(8, "closed-loop pipeline and ablations", 120.0) as c:
        parts = []
        for name, sc in (("config1", config1), ("config2", config2)):
            full = run_pipeline(sc)
            nop2 = run_pipeline(sc, no_phase2=True, refined=full.refine, lift=full.lift)
            nop3 = run_pipeline(sc, no_phase3=True, refined=full.refine, lift=full.lift)
            log = full.log
            assert not log.aborted
            assert len(log) == sc.reference().z.shape[0] + sc.approach_steps
            assert log.max_friction_residual() <= 0
            assert full.orientation_deviation_deg <= 2.0
            assert not nop2.log.aborted and not nop3.log.aborted
            assert nop2.orientation_deviation_deg > full.orientation_deviation_deg
            assert nop3.squeeze_effort(sc) > full.squeeze_effort(sc)
            parts.append(f"{name}: dev {full.orientation_deviation_deg:.3f} vs {nop2.orientation_deviation_deg:.3f} "
                         f"deg, squeeze {full.squeeze_effort(sc):.1f} vs {nop3.squeeze_effort(sc):.1f} N")
        c["detail"] = "; ".join(parts)


def test_9_property_suites(tmp_path):
    with criterion(9, "property suites", 120.0) as c:
        rng = np.random.default_rng(9)
        # friction sets shrink as the margin grows
        fn = -rng.uniform(0.1, 50, 2000)
        ft = rng.uniform(0, 25, 2000)
        tn = rng.uniform(-0.8, 0.8, 2000)
        prev = None
        for r_s in np.linspace(0, 0.95, 12):
            fp = FP.with_margin(float(r_s))
            now = (limit_surface_residual_batch(fn, ft, tn, fp) <= 0,
                   np.array([contract_friction_cone(a, b, fp) for a, b in zip(ft, fn)]))
            if prev is not None:
                assert not np.any(now[0] & ~prev[0]) and not np.any(now[1] & ~prev[1])
            prev = now
        # cone form and ellipsoid form of the limit surface agree
        n = 10_000
        f_n = -rng.uniform(1e-3, 60, n)
        f_t = rng.standard_normal((n, 3)) * rng.uniform(0, 20, (n, 1))
        t_n = rng.uniform(-1, 1, n)
        for k in range(n):
            d = ContactDecomposition(f_n[k], f_t[k], t_n[k], np.zeros(3))
            assert soc_feasible(d, FP) == (limit_surface_residual(d, FP) <= 0)
        # the CoM estimate is the minimum-norm least-squares solution
        b = synthetic_batch(2.2, [0.02, 0.01, 0.0], R_L, R_R, seed=1, sigma_f=0.1, sigma_tau=0.01)
        m = estimate_mass(b)
        y, Phi = com_regression(b, m)
        r_hat = estimate(b).r_com_hat
        assert np.allclose(r_hat, np.linalg.pinv(Phi) @ y, atol=1e-12)
        assert r_hat[2] == 0.0
        # degenerate cross-entropy updates
        exp = ExplorationState.initial(1, 1, R=3, K_e=3)
        assert np.all(cem_update([0.0, 1.0, 2.0], np.ones((3, 1, 1)), exp)[1] == 0)
        assert cem_update([0.0, 1.0, 2.0], np.arange(1.0, 4.0).reshape(3, 1, 1), exp)[1][0, 0, 0] == pytest.approx(5 / 3)
        assert cem_update([0.0, 1.0, 2.0], np.arange(1.0, 4.0).reshape(3, 1, 1),
                          ExplorationState.initial(1, 1, R=3, K_e=1))[1][0, 0, 0] == 0
        with pytest.raises(ValueError):
            cem_update([], np.zeros((0, 1, 1)), exp)
        zero = ExplorationState(np.zeros((2, 4, 4)), R=5, K_e=2)
        assert np.array_equal(sample_candidates(np.ones((2, 4)), zero, 0), np.ones((5, 2, 4)))
        # every CLI command is seeded and deterministic, on both scenarios
        for name in ("config2_clear.ini", "config1_clip.ini"):
            tail = ["--scenario", str(SCENARIOS / name), "--seed", "11"]
            codes_a, files_a = cli_outputs(tail, tmp_path / f"{name}-a")
            codes_b, files_b = cli_outputs(tail, tmp_path / f"{name}-b")
            assert set(codes_a.values()) == {0} and codes_a == codes_b
            assert files_a == files_b
            for f, data in files_a.items():
                if f.endswith(".svg"):
                    ET.fromstring(data)
        c["detail"] = "nesting, cone/ellipsoid (1e4 points), min-norm CoM, CEM degenerate cases, CLI determinism"


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
