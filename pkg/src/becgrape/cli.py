"""Command-line runner: ``becgrape {propagate,optimize,beta-scan,validate-config} CONFIG``.

Every run writes into its own output directory: CSV tables at 15
significant digits, ``summary.json`` and ``manifest.json`` (input hash,
seed and library versions).
"""

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, dumps_config, load_config
from .controls import CHANNELS_2D, ControlGrid
from .gp import build_dvr_transform, grid_density, propagate_gp, propagate_gp_rk4
from .grape import initial_control, make_problem, optimize
from .lattice1d import hamiltonian_at, propagate_linear
from .lattice2d import Model2D, propagate_2d
from .numkernel import propagate_rk4
from .states import population_distribution

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BELOW_GOAL = 3

log = logging.getLogger("becgrape")


def _fmt(x):
    if isinstance(x, (int, np.integer, str)):
        return str(x)
    return f"{float(x):.15g}"


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path, data):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def pulse_header(channels):
    return ["step_index", "t_start"] + (["phi"] if channels == 1 else list(CHANNELS_2D))


def write_pulse(path, control):
    rows = [[k, control.times[k], *control.values[:, k]] for k in range(control.n_steps)]
    write_csv(path, pulse_header(control.channels), rows)


def read_pulse(path, t_f, optimize_flags=None):
    """Load a pulse CSV written by :func:`write_pulse` onto a grid of length ``t_f``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"pulse file {path} is empty")
    header = rows[0]
    if header not in (pulse_header(1), pulse_header(3)):
        raise ConfigError(f"pulse file {path} has unexpected header {header}")
    try:
        values = np.array([[float(v) for v in r[2:]] for r in rows[1:]]).T
    except ValueError as exc:
        raise ConfigError(f"pulse file {path}: {exc}") from exc
    if values.size == 0:
        raise ConfigError(f"pulse file {path} has no steps")
    return ControlGrid(t_f, values, optimize_flags)


def _index_labels(cfg, params):
    if cfg.family == "lattice2d":
        return [f"p_{m}_{n}" for m, n in params.pairs()]
    return [f"p_{n}" for n in params.indices]


def manifest(cfg, config_path, args, extra=None):
    raw = Path(config_path).read_bytes()
    data = {
        "command": args.command,
        "config_path": str(config_path),
        "config_sha256": hashlib.sha256(raw).hexdigest(),
        "resolved_config_sha256": hashlib.sha256(dumps_config(cfg).encode()).hexdigest(),
        "resolved_config": json.loads(dumps_config(cfg)),
        "seed": cfg.optimizer.seed,
        "versions": {
            "becgrape": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "platform": platform.platform(),
    }
    data.update(extra or {})
    return data


def _control_for_propagation(cfg):
    if cfg.control.pulse_file:
        return read_pulse(cfg.control.pulse_file, cfg.t_f)
    values = np.repeat(np.array(cfg.control.phi, dtype=float)[:, None], cfg.control.n_steps, axis=1)
    return ControlGrid(cfg.t_f, values)


# RK4 is stable for purely imaginary eigenvalues with |lambda dt| <= 2 sqrt(2)
RK4_STABILITY_LIMIT = 2.0 * np.sqrt(2.0)


def _check_rk4_step(h, dt):
    product = np.linalg.norm(h, 2) * dt
    if product > RK4_STABILITY_LIMIT:
        log.warning(
            "RK4 step %.3g times ||H|| = %.3g exceeds the stability limit %.3g; raise rk4_substeps",
            dt,
            product,
            RK4_STABILITY_LIMIT,
        )


def run_propagate(cfg, out):
    """Propagate the initial state and write observables over time."""
    lat = cfg.lattice_params()
    psi0 = cfg.initial_state.build(lat)
    control = _control_for_propagation(cfg)
    times = control.times
    curves = {}
    trajectories = {}
    if cfg.family == "gp1d":
        betas = cfg.propagate.betas or (cfg.beta,)
        for beta in betas:
            p = cfg.params(beta)
            trajectories[f"expm_beta_{beta:g}"] = propagate_gp(p, psi0, control, cfg.propagate.gp_scheme)
            if cfg.propagate.compare_rk4:
                m = cfg.propagate.rk4_substeps
                _check_rk4_step(hamiltonian_at(lat, control.values[0, 0]), control.dt / m)
                rk = propagate_gp_rk4(p, psi0, control, n_steps=control.n_steps * m)
                trajectories[f"rk4_beta_{beta:g}"] = rk[::m]
    elif cfg.family == "linear1d":
        trajectories["expm"] = propagate_linear(lat, psi0, control)
        if cfg.propagate.compare_rk4:
            hs = [hamiltonian_at(lat, phi) for phi in control.values[0]]
            _check_rk4_step(hs[0], control.dt / cfg.propagate.rk4_substeps)
            trajectories["rk4"] = propagate_rk4(hs, control.dt, psi0, cfg.propagate.rk4_substeps)
    else:
        model = Model2D(lat)
        trajectories["expm"] = propagate_2d(lat, psi0, control, model=model)
        if cfg.propagate.compare_rk4:
            hs = [model.hamiltonian(control.values[:, k]) for k in range(control.n_steps)]
            _check_rk4_step(hs[0], control.dt / cfg.propagate.rk4_substeps)
            trajectories["rk4"] = propagate_rk4(hs, control.dt, psi0, cfg.propagate.rk4_substeps)

    # projection on the target (or on the initial state when no target is set)
    ref = cfg.target_state.build(lat) if cfg.target_state is not None else psi0
    for name, traj in trajectories.items():
        curves[name] = np.abs(traj @ np.conj(ref)) ** 2
    names = list(curves)
    write_csv(out / "projection.csv", ["t", *names], np.column_stack([times, *curves.values()]))

    main = trajectories[names[0]]
    pops = population_distribution(main)
    write_csv(out / "populations.csv", ["t", *_index_labels(cfg, lat)], np.column_stack([times, pops]))
    if cfg.family != "lattice2d":
        dvr = build_dvr_transform(lat)
        dens = np.array([grid_density(psi, dvr) for psi in main])
        header = ["t"] + [f"x_{j}" for j in range(dvr.N)]
        write_csv(out / "density.csv", header, np.column_stack([times, dens]))

    summary = {"family": cfg.family, "n_steps": control.n_steps, "t_f": control.t_f, "curves": names}
    rk_pairs = [(n, n.replace("expm", "rk4")) for n in names if n.startswith("expm") and n.replace("expm", "rk4") in curves]
    if rk_pairs:
        summary["max_gap_expm_rk4"] = {a: float(np.max(np.abs(curves[a] - curves[b]))) for a, b in rk_pairs}
    summary["final_projection"] = {n: float(c[-1]) for n, c in curves.items()}
    write_json(out / "summary.json", summary)
    return EXIT_OK, summary


def _optimize_once(cfg, params):
    lat = cfg.lattice_params()
    psi0 = cfg.initial_state.build(lat)
    target = cfg.target_state.build(lat)
    problem = make_problem(params, psi0, target)
    control0 = initial_control(cfg.t_f, cfg.control.n_steps, cfg.optimizer, cfg.channels, cfg.optimize_flags)
    return optimize(problem, control0, cfg.optimizer)


def run_optimize(cfg, out):
    if cfg.target_state is None:
        raise ConfigError("optimize needs 'target_state'", "target_state")
    lat = cfg.lattice_params()
    t0 = time.perf_counter()
    result = _optimize_once(cfg, cfg.params())
    elapsed = time.perf_counter() - t0

    write_pulse(out / "pulse.csv", result.control)
    # the gradient at the last iterate is only evaluated when the run stalls
    gn = np.full(len(result.fidelity_trace), np.nan)
    gn[: len(result.grad_norm_trace)] = result.grad_norm_trace
    rows = [[i, f, g] for i, (f, g) in enumerate(zip(result.fidelity_trace, gn))]
    write_csv(out / "trace.csv", ["iteration", "fidelity", "grad_norm"], rows)
    pops = population_distribution(result.final_state)
    if cfg.family == "lattice2d":
        write_csv(out / "populations.csv", ["m", "n", "probability"], [[m, n, q] for (m, n), q in zip(lat.pairs(), pops)])
    else:
        write_csv(out / "populations.csv", ["index", "probability"], [[n, q] for n, q in zip(lat.indices, pops)])
    summary = {
        "family": cfg.family,
        "fidelity": result.fidelity,
        "iterations": result.iterations,
        "termination_reason": result.termination_reason,
        "seed": result.seed,
        "restarts": result.restarts,
        "fidelity_goal": cfg.optimizer.fidelity_goal,
        "t_f": result.control.t_f,
        "n_steps": result.control.n_steps,
        "wall_time_s": elapsed,
    }
    write_json(out / "summary.json", summary)
    code = EXIT_OK if result.fidelity >= cfg.optimizer.fidelity_goal else EXIT_BELOW_GOAL
    return code, summary


def run_beta_scan(cfg, out):
    if cfg.family != "gp1d":
        raise ConfigError("beta-scan needs family gp1d", "family")
    if cfg.target_state is None:
        raise ConfigError("beta-scan needs 'target_state'", "target_state")
    betas = cfg.beta_scan.betas
    if not betas:
        raise ConfigError("beta-scan needs a nonempty 'beta_scan.betas' list", "beta_scan.betas")
    lat = cfg.lattice_params()
    psi0 = cfg.initial_state.build(lat)
    target = cfg.target_state.build(lat)
    summary = {"family": cfg.family}
    if cfg.beta_scan.pulse_file:
        control = read_pulse(cfg.beta_scan.pulse_file, cfg.t_f)
        summary["pulse_source"] = cfg.beta_scan.pulse_file
    else:
        result = _optimize_once(cfg, cfg.params())
        control = result.control
        write_pulse(out / "pulse.csv", control)
        summary["pulse_source"] = f"optimized inline at beta={cfg.beta:g}"
        summary["optimization_fidelity"] = result.fidelity
    fids = []
    for beta in betas:
        final = propagate_gp(cfg.params(beta), psi0, control)[-1]
        fids.append(float(abs(np.vdot(target, final)) ** 2))
    write_csv(out / "beta_scan.csv", ["beta", "fidelity"], zip(betas, fids))
    summary["betas"] = list(betas)
    summary["fidelities"] = fids
    write_json(out / "summary.json", summary)
    return EXIT_OK, summary


RUNNERS = {
    "propagate": run_propagate,
    "optimize": run_optimize,
    "beta-scan": run_beta_scan,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="becgrape", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("propagate", "optimize", "beta-scan", "validate-config"):
        sp = sub.add_parser(name)
        sp.add_argument("config", help="JSON run configuration")
        if name != "validate-config":
            sp.add_argument("--output-dir", help="override the configured output directory")
            sp.add_argument("--seed", type=int, help="override the optimizer seed")
            sp.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        if args.command == "validate-config":
            print(f"{args.config}: ok ({cfg.family}, t_f = {cfg.t_f:.6g}, n_steps = {cfg.control.n_steps})")
            return EXIT_OK
        cfg = cfg.with_overrides(args.output_dir, args.seed)
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        code, summary = RUNNERS[args.command](cfg, out)
        log.info("wrote %s outputs to %s", args.command, out)
    except ConfigError as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_json(out / "manifest.json", manifest(cfg, args.config, args, {"exit_code": code}))
    print(json.dumps(summary, indent=2, sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
