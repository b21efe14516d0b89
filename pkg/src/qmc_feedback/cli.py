"""Command-line entry point: study orchestration and CSV emission.

Subcommands: ``run`` (config-driven studies), ``points`` (emit a point set),
``cbc`` (construct a lattice generating vector), ``riccati`` (single solve
export), ``simulate`` (closed-loop trajectory export).  Exit status: 0 on
success, 2 on configuration/validation errors, 3 on solver failures.

Every CSV starts with ``# config-hash=<digest>`` and, unless
``--deterministic`` is set, a ``# generated=<timestamp>`` comment.
"""

from __future__ import annotations

import argparse
import datetime
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import averaging, closed_loop, config as cfgmod, lq_oracle, qmc, riccati
from .errors import ConfigError, SolverError


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="configuration JSON path")
    common.add_argument("--seed", type=int, default=None, help="override RNG seed")
    common.add_argument("--threads", type=int, default=None,
                        help="work-pool size (default: available parallelism)")
    common.add_argument("--deterministic", action="store_true",
                        help="suppress timestamp comments in outputs")
    common.add_argument("--out", type=str, default=None, help="output directory")

    p = argparse.ArgumentParser(prog="qmc-feedback",
                                description="Parameter-averaged Riccati feedback studies")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("run", parents=[common], help="run the study named in the config")

    pp = sub.add_parser("points", parents=[common], help="emit a QMC point set as CSV")
    pp.add_argument("--method", choices=("lattice", "shifted", "folded", "interlaced", "mc"),
                    default="lattice")
    pp.add_argument("--N", type=int, required=True)
    pp.add_argument("--s", type=int, required=True)
    pp.add_argument("--alpha", type=int, default=2)
    pp.add_argument("--bscale", type=float, default=0.1)
    pp.add_argument("--bdecay", type=float, default=2.0)

    pc = sub.add_parser("cbc", parents=[common], help="construct a CBC lattice rule")
    pc.add_argument("--N", type=int, required=True)
    pc.add_argument("--s", type=int, required=True)
    pc.add_argument("--bscale", type=float, default=0.1)
    pc.add_argument("--bdecay", type=float, default=2.0)

    pr = sub.add_parser("riccati", parents=[common], help="solve the DRE and export")
    pr.add_argument("--sigma", type=str, default="", help="comma-separated parameter values")
    pr.add_argument("--flat", action="store_true", help="include flattened Pi entries")

    ps = sub.add_parser("simulate", parents=[common], help="closed-loop simulation")
    ps.add_argument("--sigma", type=str, default="", help="true parameter value")
    ps.add_argument("--dump-trajectory", type=str, default=None,
                    help="write t, y_1..y_n, u_1..u_m rows to this CSV")
    return p


def _load_config(path: str | None, seed_override: int | None) -> cfgmod.ExperimentConfig:
    if path is None:
        raise ConfigError("--config is required for this command")
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    cfg = cfgmod.validate_config(raw)
    if seed_override is not None:
        qmc_block = dict(cfg.qmc)
        qmc_block["seed"] = int(seed_override)
        cfg = cfgmod.ExperimentConfig(model=cfg.model, qmc=qmc_block, study=cfg.study,
                                      out=cfg.out, params=cfg.params)
    return cfg


def _csv_comments(cfg_hash: str, deterministic: bool, extra: list[str] = ()) -> list[str]:
    lines = [f"# config-hash={cfg_hash}"]
    if not deterministic:
        lines.append(f"# generated={datetime.datetime.now().isoformat(timespec='seconds')}")
    lines.extend(extra)
    return lines


def _write_csv(path: Path, comments: list[str], header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for line in comments:
            fh.write(line + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[h]) for h in header) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".12g")
    return str(v)


def _running_slopes(xs, ys) -> list[float]:
    out = [float("nan")]
    for i in range(1, len(xs)):
        out.append(float(np.polyfit(np.log(xs[: i + 1]), np.log(ys[: i + 1]), 1)[0]))
    return out


def _workers(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    return max(1, os.cpu_count() or 1)


# ----------------------------------------------------------------------------
# study dispatch
# ----------------------------------------------------------------------------

def _run_study(cfg: cfgmod.ExperimentConfig, args) -> int:
    outdir = Path(args.out or cfg.out or "out")
    digest = cfgmod.config_hash(cfg)
    workers = _workers(args)
    fam = cfgmod.build_family(cfg.model) if cfg.model else None
    data = cfgmod.build_problem(fam, cfg.model) if fam is not None else None
    grid = cfgmod.build_time_grid(cfg.model) if cfg.model else None
    tracking = bool(cfg.model) and cfg.model["scenario"] == "tracking"
    comments = _csv_comments(digest, args.deterministic)

    if cfg.study == "riccati-check":
        sigma = np.zeros(int(cfg.qmc.get("s", 4)))
        A = fam.A0.copy()
        traj = riccati.solve_riccati(A, fam, grid)
        if tracking:
            hs = riccati.solve_offset(A, fam, traj, data, sigma, grid)
            x0 = data.y0 - data.g(0.0)
            jr = riccati.optimal_cost_nonhomogeneous(traj, hs, data, fam, sigma, x0)
            sol = lq_oracle.solve_open_loop(fam, lq_oracle.transformed_data(fam, data, sigma),
                                            sigma, grid)
        else:
            jr = riccati.optimal_cost_homogeneous(traj, data.y0)
            sol = lq_oracle.solve_open_loop(fam, data, sigma, grid)
        rows = [
            {"quantity": "cost_feedback", "value": jr},
            {"quantity": "cost_oracle", "value": sol.cost},
            {"quantity": "rel_error", "value": abs(jr - sol.cost) / abs(sol.cost)},
        ]
        _write_csv(outdir / "riccati-check.csv", comments, ["quantity", "value"], rows)
        return 0

    if cfg.study == "oracle-check":
        sigma = np.zeros(int(cfg.qmc.get("s", 4)))
        use = lq_oracle.transformed_data(fam, data, sigma) if tracking else data
        sol = lq_oracle.solve_open_loop(fam, use, sigma, grid)
        from .spatial_model import adjoint_control

        grad_dev = float(np.abs(sol.us - sol.qs @ adjoint_control(fam).T).max())
        rows = [
            {"quantity": "kkt_residual", "value": sol.kkt_residual},
            {"quantity": "gradient_identity_dev", "value": grad_dev},
            {"quantity": "cost", "value": sol.cost},
        ]
        _write_csv(outdir / "oracle-check.csv", comments, ["quantity", "value"], rows)
        return 0

    if cfg.study in ("qmc-rate", "mc-rate"):
        method = "mc" if cfg.study == "mc-rate" else cfg.qmc.get("method", "shifted")
        if method == "lattice":
            method = "shifted"
        N_list = cfg.qmc.get("N_list") or [cfg.qmc["N"]]
        res = averaging.qmc_rate_study(
            fam, data, grid, s=int(cfg.qmc["s"]), N_list=[int(N) for N in N_list],
            method=method, R=int(cfg.qmc.get("R", 16)), seed=cfg.seed,
            alpha=int(cfg.qmc.get("alpha", 2)), tracking=tracking, workers=workers,
            cache_dir=outdir / "cache",
            weight_mode=cfg.qmc.get("weight_mode", "pod"),
            reference_m=int(cfg.params.get("reference_m", 12)))
        xs = [r["N"] for r in res["rows"]]
        ys = [r["rms_error"] for r in res["rows"]]
        slopes = _running_slopes(xs, ys)
        rows = [{"N": x, "error": y, "slope_running": sl}
                for x, y, sl in zip(xs, ys, slopes)]
        _write_csv(outdir / f"{cfg.study}.csv", comments,
                   ["N", "error", "slope_running"], rows)
        return 0

    if cfg.study == "truncation":
        s_list = [int(s) for s in cfg.params.get("s_list", [4, 8, 16, 32])]
        s_ref = int(cfg.params.get("s_ref", 64))
        N = int(cfg.qmc.get("N", 1021))
        res = averaging.truncation_study(fam, data, grid, s_list, s_ref, N=N,
                                         tracking=tracking, workers=workers)
        xs = [r["s"] for r in res["rows"]]
        ys = [r["error"] for r in res["rows"]]
        slopes = _running_slopes(xs, ys)
        rows = [{"s": x, "error": y, "slope_running": sl}
                for x, y, sl in zip(xs, ys, slopes)]
        _write_csv(outdir / "truncation.csv", comments, ["s", "error", "slope_running"], rows)
        _write_csv(outdir / "truncation-corner.csv", comments, ["s", "error"],
                   res["corner_rows"])
        return 0

    if cfg.study == "propagation":
        n_sigma = int(cfg.params.get("sigma_count", 5))
        s = int(cfg.qmc.get("s", 4))
        rng = qmc.rng_for(cfg.seed, 901)
        sigmas = [rng.uniform(-0.5, 0.5, size=s) for _ in range(n_sigma)]
        A0 = fam.A0.copy()
        traj = riccati.solve_riccati(A0, fam, grid)
        law_exact = riccati.feedback_from(traj, None, fam)
        N = int(cfg.qmc.get("N", 31))
        rule = qmc.cbc_lattice(N, s, averaging.pod_spec_for(fam, s))
        stats = averaging.average_feedback(
            averaging.CubatureRule.equal_weight(qmc.random_shift(rule, cfg.seed)),
            fam, data, grid, tracking=tracking, workers=workers)
        rows = closed_loop.propagation_study(fam, data, grid, sigmas, law_exact,
                                             stats.as_law())
        _write_csv(outdir / "propagation.csv", comments,
                   ["sigma_id", "eps_fb", "eps_y", "eps_u", "ratio_y", "ratio_u"], rows)
        return 0

    if cfg.study == "derivative-decay":
        j_list = [int(j) for j in cfg.params.get("j_list", [1, 2, 4, 8, 16])]
        delta = float(cfg.params.get("delta", 1e-3))
        res = averaging.derivative_decay_study(fam, data, grid, j_list, delta=delta)
        _write_csv(outdir / "derivative-decay.csv", comments,
                   ["j", "fd_gain", "fd_cost", "ratio_gain", "ratio_cost", "b_ratio"],
                   res["rows"])
        return 0

    if cfg.study == "points":
        ns = argparse.Namespace(method=cfg.qmc.get("method", "lattice"),
                                N=int(cfg.qmc["N"]), s=int(cfg.qmc["s"]),
                                alpha=int(cfg.qmc.get("alpha", 2)),
                                bscale=0.1, bdecay=2.0, seed=cfg.seed,
                                deterministic=args.deterministic,
                                out=str(outdir), config=None, threads=args.threads)
        return _cmd_points(ns, digest)

    raise ConfigError(f"study '{cfg.study}' is not dispatchable")


# ----------------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------------

def _weights_from_flags(s: int, bscale: float, bdecay: float) -> qmc.WeightSpec:
    b = bscale * np.arange(1, s + 1, dtype=float) ** (-bdecay)
    return qmc.WeightSpec(kind="pod", bseq=b)


def _build_pointset(method: str, N: int, s: int, alpha: int, seed: int,
                    bscale: float, bdecay: float) -> qmc.QmcPointSet:
    if method == "mc":
        return qmc.mc_points(N, s, seed)
    if method == "interlaced":
        m = int(round(math.log2(N)))
        if 2**m != N:
            raise ConfigError("interlaced method needs N = 2^m")
        spec = qmc.WeightSpec(kind="spod",
                              bseq=bscale * np.arange(1, s + 1, dtype=float) ** (-bdecay),
                              alpha=alpha)
        return qmc.interlaced_points(qmc.cbc_interlaced(m, s, alpha, spec))
    rule = qmc.cbc_lattice(N, s, _weights_from_flags(s, bscale, bdecay))
    if method == "lattice":
        return qmc.lattice_pointset(rule)
    if method == "shifted":
        return qmc.random_shift(rule, seed)
    if method == "folded":
        return qmc.folded_lattice(rule)
    raise ConfigError(f"unknown method '{method}'")


def _cmd_points(args, digest: str | None = None) -> int:
    seed = args.seed if args.seed is not None else 0
    ps = _build_pointset(args.method, args.N, args.s, args.alpha, seed,
                         args.bscale, args.bdecay)
    outdir = Path(args.out or "out")
    comments = _csv_comments(digest or "none", args.deterministic, [ps.meta.header()])
    header = ["k"] + [f"x{j + 1}" for j in range(ps.s)]
    rows = [{"k": k, **{f"x{j + 1}": ps.points[k, j] for j in range(ps.s)}}
            for k in range(ps.N)]
    _write_csv(outdir / "points.csv", comments, header, rows)
    return 0


def _cmd_cbc(args) -> int:
    rule = qmc.cbc_lattice(args.N, args.s, _weights_from_flags(args.s, args.bscale,
                                                               args.bdecay))
    outdir = Path(args.out or "out")
    comments = _csv_comments("none", args.deterministic,
                             [f"# wce2={rule.wce2:.12g}"])
    rows = [{"j": j + 1, "z": z} for j, z in enumerate(rule.z)]
    _write_csv(outdir / "cbc.csv", comments, ["j", "z"], rows)
    print(f"N={rule.N} s={rule.s} z={','.join(str(z) for z in rule.z)} "
          f"wce2={rule.wce2:.6e}")
    return 0


def _parse_sigma(text: str, smax: int) -> np.ndarray:
    if not text:
        return np.zeros(min(4, smax))
    vals = np.array([float(v) for v in text.split(",")], dtype=float)
    return vals


def _cmd_riccati(args) -> int:
    cfg = _load_config(args.config, args.seed)
    fam = cfgmod.build_family(cfg.model)
    grid = cfgmod.build_time_grid(cfg.model)
    sigma = _parse_sigma(args.sigma, fam.smax)
    from .spatial_model import evaluate_operator

    traj = riccati.solve_riccati(evaluate_operator(fam, sigma), fam, grid)
    digest = cfgmod.config_hash(cfg)
    header = ["t", "pi_fro"]
    if args.flat:
        header += [f"pi_{i + 1}_{j + 1}" for i in range(fam.n) for j in range(fam.n)]
    rows = []
    for k, t in enumerate(grid.nodes):
        row = {"t": float(t), "pi_fro": float(np.linalg.norm(traj.Pis[k], "fro"))}
        if args.flat:
            flat = traj.Pis[k].ravel()
            row.update({f"pi_{i + 1}_{j + 1}": float(flat[i * fam.n + j])
                        for i in range(fam.n) for j in range(fam.n)})
        rows.append(row)
    outdir = Path(args.out or cfg.out or "out")
    _write_csv(outdir / "riccati.csv", _csv_comments(digest, args.deterministic),
               header, rows)
    return 0


def _cmd_simulate(args) -> int:
    cfg = _load_config(args.config, args.seed)
    fam = cfgmod.build_family(cfg.model)
    data = cfgmod.build_problem(fam, cfg.model)
    grid = cfgmod.build_time_grid(cfg.model)
    tracking = cfg.model["scenario"] == "tracking"
    sigma = _parse_sigma(args.sigma, fam.smax)
    nominal = np.zeros_like(sigma)
    from .spatial_model import evaluate_operator

    A0 = evaluate_operator(fam, nominal)
    traj = riccati.solve_riccati(A0, fam, grid)
    hs = riccati.solve_offset(A0, fam, traj, data, nominal, grid) if tracking else None
    law = riccati.feedback_from(traj, hs, fam)
    sim = closed_loop.simulate(fam, sigma, law, data, grid)
    if args.dump_trajectory:
        digest = cfgmod.config_hash(cfg)
        header = (["t"] + [f"y_{i + 1}" for i in range(fam.n)]
                  + [f"u_{c + 1}" for c in range(fam.m)])
        rows = []
        for k, t in enumerate(grid.nodes):
            row = {"t": float(t)}
            row.update({f"y_{i + 1}": float(sim.ys[k, i]) for i in range(fam.n)})
            row.update({f"u_{c + 1}": float(sim.us[k, c]) for c in range(fam.m)})
            rows.append(row)
        _write_csv(Path(args.dump_trajectory), _csv_comments(digest, args.deterministic),
                   header, rows)
    print(f"terminal |y(T)|_H = {math.sqrt(fam.grid.hx) * np.linalg.norm(sim.ys[-1]):.6e}")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = _load_config(args.config, args.seed)
            return _run_study(cfg, args)
        if args.command == "points":
            return _cmd_points(args)
        if args.command == "cbc":
            return _cmd_cbc(args)
        if args.command == "riccati":
            return _cmd_riccati(args)
        if args.command == "simulate":
            return _cmd_simulate(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
