"""Command line entry point: ``stochbouss <subcommand> [--config PATH] [--seed N] [--out DIR]``.

Exit codes: 0 success, 2 a validation check failed, 1 any other error
(including a missing config file), 64 unknown flags or subcommands.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np

EXIT_OK, EXIT_ERROR, EXIT_VALIDATION, EXIT_USAGE = 0, 1, 2, 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file (dotted sections)")
    common.add_argument("--seed", type=int, help="override mc.base_seed")
    common.add_argument("--out", help="output directory (overrides mc.out)")
    common.add_argument("--replicas", type=int, help="override mc.replicas")
    common.add_argument("-v", "--verbose", action="store_true")
    p = _Parser(prog="stochbouss", description="Boundary-noise Boussinesq experiments")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="one coupled run with trajectory CSVs")
    sc = sub.add_parser("mc-scaling", parents=[common], help="eps-scaling table for P(tau = T)")
    sc.add_argument("--z-only", action="store_true", help="decide hits from Z without the coupled solve")
    sub.add_parser("validate-1d", parents=[common], help="closed-form 1D oracle suite")
    sub.add_parser("probe-constants", parents=[common],
                   help="estimate M, sweep the convective ratio, tabulate admissibility sums")
    return p


def _overrides(args) -> dict:
    return {"mc.base_seed": args.seed, "mc.out": args.out, "mc.replicas": args.replicas}


def cmd_simulate(cfg, args) -> int:
    from .coupled_driver import run_coupled, standard_data
    from .mc_harness import write_csv_atomic
    from .stochastic_convolution import TRAJECTORY_HEADER
    from .temperature_solver import TEMPERATURE_HEADER, temperature_rows
    from .velocity_solver import VELOCITY_HEADER, velocity_rows

    run = cfg.run
    theta0, u0 = standard_data(run, cfg.data_fraction)
    rep = run_coupled(run, theta0, u0, np.random.default_rng(cfg.base_seed), seed=cfg.base_seed,
                      keep_fields=True)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    summary = dict(rep.record(), velocity_cert=rep.velocity_cert, warnings=list(rep.warnings))
    (out / "report.json").write_text(json.dumps(summary, indent=2, default=float) + "\n")
    if rep.fields:
        f = rep.fields
        z = f["Z"]
        zn = z.norms(-2 * run.exponents.alpha)
        sup = np.maximum.accumulate(zn)
        write_csv_atomic(out / "trajectory.csv", TRAJECTORY_HEADER,
                         zip(z.times, zn, zn, sup))
        write_csv_atomic(out / "velocity.csv", VELOCITY_HEADER,
                         velocity_rows(f["u"], run.exponents.delta))
        sol = f["zeta_solution"]
        if sol is None:
            from .temperature_solver import ZetaSolution
            nt = len(z.times)
            sol = ZetaSolution(f["zeta"], 0, [], [], math.nan, np.zeros(nt, int), np.full(nt, math.nan))
        write_csv_atomic(out / "temperature.csv", TEMPERATURE_HEADER,
                         temperature_rows(sol, f["theta"], run.exponents.s, run.exponents.alpha))
    print(json.dumps(rep.record()))
    return EXIT_OK


def cmd_mc_scaling(cfg, args) -> int:
    from .mc_harness import epsilon_scaling

    table = epsilon_scaling(cfg, cfg.out_dir, z_only=args.z_only)
    for r in table.rows:
        print(f"eps={r['eps']:g} n={r['n']} hits={r['hits']} p_hat={r['p_hat']:.4f} "
              f"CI=[{r['ci_lo']:.4f}, {r['ci_hi']:.4f}] bound={r['bound']:.4f}")
    print(f"C_hat={table.c_hat:.4g} S={table.admissibility:.4g} slope={table.slope:.3g}")
    for flag in table.flags:
        print(f"warning: {flag}")
    return EXIT_OK if table.all_below else EXIT_VALIDATION


def cmd_validate_1d(cfg, args) -> int:
    from .mc_harness import write_csv_atomic
    from .oracle_1d import ORACLE_HEADER, Oracle1DConfig, admissibility_verdicts, validate_simulator_against_oracle

    o = cfg.oracle
    oc = Oracle1DConfig(n_modes=int(o["n_modes"]), paths=int(o["paths"]), steps=int(o["steps"]),
                        seed=int(o["seed"]))
    rows = validate_simulator_against_oracle(oc)
    write_csv_atomic(cfg.out_dir / "oracle.csv", ORACLE_HEADER, ([r[h] for h in ORACLE_HEADER] for r in rows))
    ok = all(r["verdict"] == "pass" for r in rows)
    for r in rows:
        print(f"alpha={r['alpha']} t={r['t']} closed={r['closed_form']:.6g} "
              f"mc={r['mc_estimate']:.6g} {r['verdict']}")
    expected = {0.2: "bounded", 0.25: "log-divergent", 0.3: "power-divergent"}
    for beta, res in admissibility_verdicts().items():
        good = res["verdict"] == expected[beta]
        ok &= good
        print(f"beta={beta} admissibility {res['verdict']} {'pass' if good else 'fail'}")
    return EXIT_OK if ok else EXIT_VALIDATION


def cmd_probe_constants(cfg, args) -> int:
    from .boundary_noise import admissibility_series
    from .mc_harness import write_csv_atomic
    from .spectral_core import FREESLIP, BoxDomain, Trajectory
    from .velocity_solver import convective_probe, estimate_M, random_solenoidal

    pr = cfg.probe
    ex = cfg.run.exponents
    rng = np.random.default_rng(cfg.base_seed)
    T, dt = float(pr["T"]), float(pr["dt"])
    dom = BoxDomain(3, int(pr["n_u"]))
    m, ratios = estimate_M(T, ex.delta, ex.p, int(pr["n_probes"]), rng, dom, dt)
    write_csv_atomic(cfg.out_dir / "probe_M.csv", ("probe", "ratio"), enumerate(ratios))
    times = dt * np.arange(int(round(T / dt)) + 1)
    conv_rows = []
    for i in range(int(pr["pairs"])):
        prof = np.cos(np.outer(times, rng.uniform(0, 6, 2)) + rng.uniform(0, 6, 2))
        a = random_solenoidal(dom, rng, 0.5)
        b = random_solenoidal(dom, rng, 0.5)
        u = Trajectory(times, prof[:, 0, None, None, None, None] * a, dom, FREESLIP)
        v = Trajectory(times, prof[:, 1, None, None, None, None] * b, dom, FREESLIP)
        conv_rows.append((i, convective_probe(u, v, ex.p, ex.delta)))
    write_csv_atomic(cfg.out_dir / "probe_convective.csv", ("pair", "ratio"), conv_rows)
    spec = cfg.run.noise_spec()
    part = admissibility_series(spec, ex.beta, 4096)
    write_csv_atomic(cfg.out_dir / "admissibility.csv", ("k", "partial_sum"),
                     ((k, part[k - 1]) for k in (2 ** j for j in range(13))))
    print(f"M_hat={m:.4f} max_convective_ratio={max(r for _, r in conv_rows):.4f}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "mc-scaling": cmd_mc_scaling,
            "validate-1d": cmd_validate_1d, "probe-constants": cmd_probe_constants}


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    from .mc_harness import ConfigError, load_config
    try:
        cfg = load_config(args.config, _overrides(args))
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ConfigError as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        return COMMANDS[args.command](cfg, args)
    except Exception as exc:  # report and map to the error exit code
        logging.getLogger(__name__).debug("command failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
