"""Acceptance criteria 1-8 at their pinned tolerances.

Each test prints one ``PASS criterion N`` / ``FAIL criterion N`` line (with
capture disabled, so it shows up in plain ``pytest -v`` output) before
asserting.
"""
from __future__ import annotations

import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from stochbouss.boundary_noise import admissibility_total
from stochbouss.cli import main as cli_main
from stochbouss.coupled_driver import run_coupled, simulate_noise_path, standard_data, stopping_index, uniqueness_probe
from stochbouss.mc_harness import epsilon_scaling, load_config, replica_seed, run_ensemble
from stochbouss.oracle_1d import (Oracle1DConfig, _spec, admissibility_verdicts, closed_form_Z_second_moment,
                                  truncated_moments, validate_simulator_against_oracle)
from stochbouss.spectral_core import FREESLIP, BoxDomain, SpectralField, Trajectory, apply_fractional_power, heat_semigroup
from stochbouss.stochastic_convolution import fit_tail_constant, simulate_Z, tail_probability
from stochbouss.temperature_solver import ColumnCoupling, picard_residual
from stochbouss.velocity_solver import (Convection, convective_probe, divergence_residual, gradient_field,
                                        leray_project, maxreg_norm, random_solenoidal, solve_linear_stokes)

STANDARD = Path(__file__).resolve().parents[1] / "configs" / "standard.cfg"


@pytest.fixture
def verdict(capsys):
    def report(n: int, ok: bool, detail: str, started: float):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail} [{time.time() - started:.1f}s]")
        assert ok, detail
    return report


@pytest.fixture(scope="module")
def standard():
    return load_config(STANDARD)


def test_criterion_1_closed_form_match(verdict):
    t0 = time.time()
    rows = validate_simulator_against_oracle(Oracle1DConfig())
    ok_rows = [r for r in rows if r["alpha"] == 0.3]
    assert [r["t"] for r in ok_rows] == [0.1, 0.5, 1.0]
    ok = all(abs(r["mc_estimate"] - r["closed_form"]) <= 0.02 * r["closed_form"] + r["half_width"]
             for r in ok_rows)
    detail = ", ".join(f"t={r['t']}: rel_err={r['rel_err']:.4f} hw/cf={r['half_width'] / r['closed_form']:.4f}"
                       for r in ok_rows)
    verdict(1, ok, detail, t0)


def test_criterion_2_regularity_thresholds(verdict):
    t0 = time.time()
    n, t = 512, 0.5
    ens = simulate_Z(_spec(1.0), BoxDomain(1, n), t, t / 2048, np.random.default_rng(20240602),
                     paths=2000, track=False)
    sizes = [64, 128, 256, 512]

    def growth(alpha, sz):
        m = truncated_moments(ens.final, alpha, sz)
        return [m[b][0] / m[a][0] - 1 for a, b in zip(sz, sz[1:])]

    g_ok = growth(0.3, sizes[1:])
    g_bad = growth(0.2, sizes)
    saturates = all(g < 0.10 for g in g_ok) and all(np.diff(g_ok) < 0)
    diverges = all(g > 0.10 for g in g_bad) and math.isinf(closed_form_Z_second_moment(t, 0.2))
    verdicts = {b: r["verdict"] for b, r in admissibility_verdicts().items()}
    adm = verdicts == {0.2: "bounded", 0.25: "log-divergent", 0.3: "power-divergent"}
    detail = (f"alpha=0.3 growth {np.round(g_ok, 4).tolist()}, alpha=0.2 growth "
              f"{np.round(g_bad, 4).tolist()}, admissibility {verdicts}")
    verdict(2, saturates and diverges and adm, detail, t0)


def test_criterion_3_pathwise_eps_scaling(verdict, standard):
    t0 = time.time()
    run = standard.run
    a2 = -2 * run.exponents.alpha
    worst, mismatches = 0.0, 0
    for eps in standard.eps_list:
        reps = run_ensemble(standard, eps, replicas=100, z_only=True)
        for r in reps:
            z1 = simulate_noise_path(replace(run, eps=1.0), np.random.default_rng(r.seed))
            ze = simulate_noise_path(replace(run, eps=eps), np.random.default_rng(r.seed))
            scale = np.max(np.abs(ze.coeffs))
            worst = max(worst, np.max(np.abs(ze.coeffs - math.sqrt(eps) * z1.coeffs)) / scale)
            hit_e = stopping_index(ze.norms(a2), run.threshold)[0] < run.steps
            hit_1 = stopping_index(z1.norms(a2), run.threshold / math.sqrt(eps))[0] < run.steps
            mismatches += (hit_e != hit_1) + (r.hit != hit_1)
    ok = worst <= 1e-12 and mismatches == 0
    verdict(3, ok, f"max relative coefficient error {worst:.2e}, indicator mismatches {mismatches}", t0)


def test_criterion_4_tail_bound(verdict, standard):
    t0 = time.time()
    run = standard.run
    dom = run.domains()[1]
    spec = run.noise_spec(1.0)
    S = admissibility_total(spec)
    ss = np.random.SeedSequence(standard.base_seed, spawn_key=(2**31 + 4,))
    fit_rng, eval_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    fit = simulate_Z(spec, dom, run.T, run.dt, fit_rng, paths=1000, scheme=run.scheme)
    c_hat = fit_tail_constant(fit.sup, S)
    eps = 1e-2
    ev = simulate_Z(run.noise_spec(eps), dom, run.T, run.dt, eval_rng, paths=1000, scheme=run.scheme)
    # grid around the level where the bound equals one, out to where no path exceeds it
    s0 = math.sqrt(eps * c_hat * S)
    rows = tail_probability(ev.sup, s0 * np.geomspace(0.8, 3.0, 20), eps, c_hat, S)
    ok = all(r["p_hat"] <= r["bound"] for r in rows)
    tight = max(rows, key=lambda r: r["p_hat"] / r["bound"])
    verdict(4, ok, f"C_hat={c_hat:.4g} S={S:.4g}; largest p_hat/bound at s={tight['s']:.4g}: "
                   f"p_hat={tight['p_hat']:.3f} bound={tight['bound']:.3f}", t0)


@pytest.mark.slow
def test_criterion_5_global_existence_scaling(verdict, standard, tmp_path):
    t0 = time.time()
    assert standard.replicas == 500 and standard.eps_list == (1e-3, 1e-2, 1e-1)
    table = epsilon_scaling(standard, tmp_path)
    lines = "; ".join(f"eps={r['eps']:g}: 1-p_hat={1 - r['p_hat']:.4f} vs {table.constant * r['eps']:.4f}"
                      for r in table.rows)
    detail = (f"{lines}; C_hat={table.c_hat:.4g} S={table.admissibility:.4g} "
              f"const={table.constant:.4g} within_ci={table.within_ci} flags={table.flags}")
    verdict(5, table.all_below, detail, t0)


def test_criterion_6_picard_certificates(verdict, standard):
    t0 = time.time()
    run = replace(standard.run, coupling="global_picard")
    theta0, u0 = standard_data(run, standard.data_fraction)
    rep = run_coupled(run, theta0, u0, np.random.default_rng(standard.base_seed), keep_fields=True)
    f = rep.fields
    sol, u, Z = f["zeta_solution"], f["u"], f["Z"]
    coupling = ColumnCoupling(run.n_u, run.n_t)
    conv = Convection(run.n_u, run.dealias)
    # independent residuals: re-apply Psi and Gamma to the returned fixed point
    zeta_res = picard_residual(f["zeta"], u, Z, theta0, coupling, run.exponents.s)
    force = coupling.buoyancy(Z.coeffs[:, 0] + f["zeta"].coeffs[:, 0]) - conv(u.coeffs)
    gamma_u = solve_linear_stokes(Trajectory(u.times, force, u.domain, FREESLIP), u0, float(u.times[-1]), run.dt)
    u_res = maxreg_norm(u.with_coeffs(gamma_u.coeffs - u.coeffs), run.exponents.p, run.exponents.delta).value
    uq = uniqueness_probe(run, theta0, u0, seed=standard.base_seed)
    zf, d = max(sol.factors), rep.velocity_cert["d"]
    ok = (not rep.warnings and zf < 0.9 and d < 0.5 and zeta_res <= run.tol and u_res <= run.tol
          and uq["zeta_diff"] <= 10 * run.tol and uq["u_diff_E"] <= 10 * run.tol)
    verdict(6, ok, f"zeta factor {zf:.3g}, velocity d {d:.3g}, residuals {zeta_res:.2e}/{u_res:.2e}, "
                   f"uniqueness {uq['zeta_diff']:.2e}/{uq['u_diff_E']:.2e} (tol {run.tol:g})", t0)


def test_criterion_7_bilinear_probe(verdict):
    t0 = time.time()
    p, delta = 4.0, 0.05
    times = np.linspace(0.0, 0.5, 17)
    fine, coarse = BoxDomain(3, 32), BoxDomain(3, 16)
    convs = {32: Convection(32), 16: Convection(16)}
    rng = np.random.default_rng(20240607)
    ratios = {16: [], 32: []}
    for _ in range(100):
        prof = np.cos(np.outer(times, rng.uniform(0, 6, 2)) + rng.uniform(0, 6, 2))
        a = random_solenoidal(fine, rng, 0.3)
        b = random_solenoidal(fine, rng, 0.3)
        # the coarse pair is the same field restricted to the first 16 modes per axis
        for n, dom in ((32, fine), (16, coarse)):
            u = Trajectory(times, prof[:, 0, None, None, None, None] * a[:, :n, :n, :n], dom, FREESLIP)
            v = Trajectory(times, prof[:, 1, None, None, None, None] * b[:, :n, :n, :n], dom, FREESLIP)
            ratios[n].append(convective_probe(u, v, p, delta, convs[n]))
    m16, m32 = max(ratios[16]), max(ratios[32])
    drift = abs(m32 - m16) / m16
    ok = math.isfinite(m16) and math.isfinite(m32) and drift < 0.10
    verdict(7, ok, f"max ratio 16^3 {m16:.4g}, 32^3 {m32:.4g}, drift {drift:.4f}", t0)


def test_criterion_8_structural_invariants(verdict, standard, tmp_path):
    t0 = time.time()
    failures = []
    rng = np.random.default_rng(8)
    dom = BoxDomain(3, standard.run.n_u)
    raw = SpectralField(dom, rng.standard_normal((3,) + (dom.n,) * 3) * dom.component_mask(), FREESLIP)
    pf = leray_project(raw)
    if divergence_residual(pf.coeffs) > 1e-10:
        failures.append("projection not divergence free")
    if np.max(np.abs(leray_project(pf).coeffs - pf.coeffs)) > 1e-10 * np.max(np.abs(pf.coeffs)):
        failures.append("projection not idempotent")
    for _ in range(10):
        grad = gradient_field(rng.standard_normal((dom.n,) * 3), dom).coeffs
        if abs(np.sum(pf.coeffs * grad)) > 1e-10 * math.sqrt(np.sum(grad**2) * np.sum(pf.coeffs**2)):
            failures.append("projection not orthogonal to gradients")
            break
    scalar = SpectralField(BoxDomain(3, 8), rng.standard_normal((1, 8, 8, 8)))
    for t, r in ((0.1, 0.3), (0.01, 1.0)):
        lhs = heat_semigroup(heat_semigroup(scalar, t), r).coeffs
        if np.max(np.abs(lhs - heat_semigroup(scalar, t + r).coeffs)) > 1e-12 * np.max(np.abs(lhs)):
            failures.append("semigroup law")
    for a, b in ((0.3, -0.7), (1.25, 0.5)):
        lhs = apply_fractional_power(apply_fractional_power(scalar, a), b).coeffs
        rhs = apply_fractional_power(scalar, a + b).coeffs
        if np.max(np.abs(lhs - rhs)) > 1e-12 * np.max(np.abs(rhs)):
            failures.append("fractional power composition")
    heat = [heat_semigroup(scalar, t).l2_norm() for t in np.linspace(0, 1, 11)]
    if np.any(np.diff(heat) > 0):
        failures.append("heat decay")
    stokes = solve_linear_stokes(None, pf, 0.25, 1 / 128)
    energy = np.sqrt(np.sum(stokes.coeffs**2, axis=(1, 2, 3, 4)))
    if np.any(np.diff(energy) > 1e-12 * energy[0]):
        failures.append("Stokes energy monotonicity")
    # divergence-free on every solved slice of both coupling modes
    theta0, u0 = standard_data(standard.run, standard.data_fraction)
    for mode in ("per_step", "global_picard"):
        run = replace(standard.run, coupling=mode, eps=0.1)
        rep = run_coupled(run, theta0, u0, np.random.default_rng(replica_seed(standard.base_seed, 0)),
                          keep_fields=True)
        if rep.fields and max(divergence_residual(c) for c in rep.fields["u"].coeffs) > 1e-10:
            failures.append(f"divergence in {mode} run")
    # deterministic replay: ensemble and simulate CSVs are bit identical
    small = replace(standard, replicas=4)
    for name in ("a", "b"):
        run_ensemble(small, 1e-1, tmp_path / f"ens_{name}.csv")
        assert cli_main(["simulate", "--config", str(STANDARD), "--out", str(tmp_path / name)]) == 0
    if (tmp_path / "ens_a.csv").read_bytes() != (tmp_path / "ens_b.csv").read_bytes():
        failures.append("ensemble replay")
    for name in ("trajectory.csv", "velocity.csv", "temperature.csv", "report.json"):
        if (tmp_path / "a" / name).read_bytes() != (tmp_path / "b" / name).read_bytes():
            failures.append(f"simulate replay {name}")
    verdict(8, not failures, "all invariants hold" if not failures else "; ".join(failures), t0)
