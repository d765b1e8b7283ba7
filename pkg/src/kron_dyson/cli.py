"""Batch command-line front end.

Each subcommand resolves its parameters with precedence flag > config file
> default, runs the corresponding library routine, and writes CSV/JSON
artifacts plus a manifest.json with enough metadata to re-run the
experiment exactly.  CSV bodies are deterministic for a fixed config and
seed; wall-clock metadata lives only in the manifest.
"""

import csv
import hashlib
import json
import os
import time

import click
import numpy as np

from . import __version__, clt, ensemble, mde, sampler, stability
from ._util import resolve_threads
from .errors import DomainError, InputError, KronDysonError, NumericalError

_EXIT_CODES = {DomainError: 1, InputError: 2, NumericalError: 3}


def _exit_code(err):
    for cls, code in _EXIT_CODES.items():
        if isinstance(err, cls):
            return code
    return 1


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise InputError(f"cannot read config file {path}: {err}")
    if not isinstance(cfg, dict):
        raise InputError("config file must hold a JSON object")
    return cfg


def _resolve(flag, cfg, key, default):
    if flag is not None:
        return flag
    if key in cfg:
        return cfg[key]
    return default


def _get_ensemble(spec):
    if os.path.exists(spec):
        return ensemble.load_ensemble(spec)
    if spec in ensemble.preset_names():
        return ensemble.preset(spec)
    raise InputError(
        f"ensemble '{spec}' is neither a file nor a preset "
        f"(presets: {', '.join(ensemble.preset_names())})"
    )


def _finish(out, command, config, seed, threads, t0, artifacts):
    blob = json.dumps(config, sort_keys=True).encode()
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "seed": seed,
        "threads": threads,
        "wall_time_s": time.time() - t0,
        "artifacts": artifacts,
    }
    _write_json(os.path.join(out, "manifest.json"), manifest)
    click.echo(f"{command}: wrote {', '.join(artifacts)} to {out}")


def _run_command(fn):
    try:
        fn()
    except KronDysonError as err:
        click.echo(f"error: {err}", err=True)
        raise SystemExit(_exit_code(err))


@click.group()
def main():
    """Dyson-equation and spectral-statistics toolbox for block-structured
    random matrix ensembles."""


@main.command()
@click.argument("ensemble_spec")
def validate(ensemble_spec):
    """Check an ensemble file (or preset) against the model constraints."""

    def body():
        ens = _get_ensemble(ensemble_spec)
        ensemble.validate(ens)
        click.echo(f"OK n={ens.n} d={ens.d} beta={ens.beta} hash={ens.hash_hex()}")

    _run_command(body)


@main.command()
@click.argument("ensemble_spec")
@click.option("--config", type=click.Path(), default=None)
@click.option("--restarts", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
def flatness(ensemble_spec, config, restarts, seed, out):
    """Support pattern, primitivity exponent, and flatness constant."""

    def body():
        t0 = time.time()
        cfg = _load_config(config)
        restarts_v = int(_resolve(restarts, cfg, "restarts", 200))
        seed_v = int(_resolve(seed, cfg, "seed", 0))
        out_v = _resolve(out, cfg, "out", "flatness_out")
        ens = _get_ensemble(ensemble_spec)
        report = ensemble.estimate_flatness_constant(
            ens, restarts=restarts_v, seed=seed_v
        )
        os.makedirs(out_v, exist_ok=True)
        payload = {
            "ensemble_hash": ens.hash_hex(),
            "support_pattern": report.Z.astype(int).tolist(),
            "exponent": report.exponent,
            "c_estimate": report.c_estimate,
            "certified": report.certified,
            "samples_used": report.samples_used,
        }
        _write_json(os.path.join(out_v, "flatness.json"), payload)
        resolved = {
            "ensemble": ensemble_spec,
            "restarts": restarts_v,
            "seed": seed_v,
        }
        _finish(out_v, "flatness", resolved, seed_v, 1, t0, ["flatness.json"])

    _run_command(body)


@main.command()
@click.argument("ensemble_spec")
@click.option("--config", type=click.Path(), default=None)
@click.option("--points", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
def dos(ensemble_spec, config, points, out):
    """Self-consistent density of states on a uniform energy grid."""

    def body():
        t0 = time.time()
        cfg = _load_config(config)
        points_v = int(_resolve(points, cfg, "points", 2000))
        out_v = _resolve(out, cfg, "out", "dos_out")
        ens = _get_ensemble(ensemble_spec)
        curve = mde.density_of_states(ens, points=points_v)
        os.makedirs(out_v, exist_ok=True)
        rows = zip(
            curve.x, curve.rho, curve.residual, curve.eta_used,
            (int(f) for f in curve.flagged),
        )
        _write_csv(
            os.path.join(out_v, "dos.csv"),
            ["x", "rho", "residual", "eta_floor", "flagged"],
            rows,
        )
        _write_json(
            os.path.join(out_v, "dos_summary.json"),
            {
                "ensemble_hash": ens.hash_hex(),
                "mass": curve.mass,
                "points": len(curve.x),
                "support_radius": mde.support_radius(ens),
                "max_rho": float(np.max(curve.rho)),
            },
        )
        resolved = {"ensemble": ensemble_spec, "points": points_v}
        _finish(out_v, "dos", resolved, 0, 1, t0, ["dos.csv", "dos_summary.json"])

    _run_command(body)


@main.command(name="mde-probe")
@click.argument("ensemble_spec")
@click.option("--config", type=click.Path(), default=None)
@click.option("--z", "z_points", multiple=True, help="complex point, e.g. 0.5+0.3j")
@click.option("--tol", type=float, default=None)
@click.option("--out", type=click.Path(), default=None)
def mde_probe(ensemble_spec, config, z_points, tol, out):
    """Solve the matrix Dyson equation at chosen spectral points."""

    def body():
        t0 = time.time()
        cfg = _load_config(config)
        zs = list(z_points) if z_points else cfg.get("z", ["2j"])
        tol_v = float(_resolve(tol, cfg, "tol", 1e-11))
        out_v = _resolve(out, cfg, "out", "mde_out")
        ens = _get_ensemble(ensemble_spec)
        try:
            zvals = [complex(str(zs_i).replace(" ", "")) for zs_i in zs]
        except ValueError as err:
            raise InputError(f"bad complex literal in z list: {err}")
        points = [mde.solve_mde_at(ens, z, tol=tol_v) for z in zvals]
        os.makedirs(out_v, exist_ok=True)
        header = ["z_re", "z_im", "residual", "iterations"]
        for a in range(ens.n):
            for b in range(ens.n):
                header += [f"m{a}{b}_re", f"m{a}{b}_im"]
        rows = []
        for pt in points:
            row = [pt.z.real, pt.z.imag, pt.residual, pt.iterations]
            for a in range(ens.n):
                for b in range(ens.n):
                    row += [pt.M[a, b].real, pt.M[a, b].imag]
            rows.append(row)
        _write_csv(os.path.join(out_v, "mde.csv"), header, rows)
        resolved = {"ensemble": ensemble_spec, "z": [str(z) for z in zvals], "tol": tol_v}
        _finish(out_v, "mde-probe", resolved, 0, 1, t0, ["mde.csv"])

    _run_command(body)


@main.command(name="stability-probe")
@click.argument("ensemble_spec")
@click.option("--config", type=click.Path(), default=None)
@click.option("--e0", type=float, default=None)
@click.option("--eps", default=None, help="comma-separated offsets")
@click.option("--out", type=click.Path(), default=None)
def stability_probe(ensemble_spec, config, e0, eps, out):
    """Two-point stability diagnostics at a bulk energy."""

    def body():
        t0 = time.time()
        cfg = _load_config(config)
        e0_v = float(_resolve(e0, cfg, "e0", 0.0))
        eps_raw = _resolve(eps, cfg, "eps", "1e-2,5e-3,2.5e-3,1.25e-3")
        if isinstance(eps_raw, str):
            eps_list = tuple(float(s) for s in eps_raw.split(","))
        else:
            eps_list = tuple(float(s) for s in eps_raw)
        out_v = _resolve(out, cfg, "out", "stability_out")
        ens = _get_ensemble(ensemble_spec)
        probe = stability.stability_probe(ens, e0_v, eps_list=eps_list)
        os.makedirs(out_v, exist_ok=True)
        rows = [
            [e, lt.real, lt.imag, lm.real, lm.imag, abs(lt - lm)]
            for e, lt, lm in zip(
                probe.eps_list, probe.lambda_true, probe.lambda_model
            )
        ]
        _write_csv(
            os.path.join(out_v, "stability.csv"),
            ["eps", "lambda_re", "lambda_im", "model_re", "model_im", "abs_error"],
            rows,
        )
        _write_json(os.path.join(out_v, "stability.json"), probe.to_dict())
        resolved = {"ensemble": ensemble_spec, "e0": e0_v, "eps": list(eps_list)}
        _finish(
            out_v, "stability-probe", resolved, 0, 1, t0,
            ["stability.csv", "stability.json"],
        )

    _run_command(body)


@main.command()
@click.argument("ensemble_spec")
@click.option("--config", type=click.Path(), default=None)
@click.option("--n-list", default=None, help="comma-separated N ladder")
@click.option("--samples", type=int, default=None)
@click.option("--e0", type=float, default=None)
@click.option("--eta", default=None, help="'nhalf' or a fixed float")
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
def locallaw(ensemble_spec, config, n_list, samples, e0, eta, seed, threads, out):
    """Resolvent concentration sweep over a ladder of matrix sizes."""

    def body():
        t0 = time.time()
        cfg = _load_config(config)
        nl_raw = _resolve(n_list, cfg, "n_list", "128,256,512,1024")
        if isinstance(nl_raw, str):
            ns = [int(s) for s in nl_raw.split(",")]
        else:
            ns = [int(s) for s in nl_raw]
        samples_v = int(_resolve(samples, cfg, "samples", 20))
        e0_v = float(_resolve(e0, cfg, "e0", 0.0))
        eta_raw = str(_resolve(eta, cfg, "eta", "nhalf"))
        seed_v = int(_resolve(seed, cfg, "seed", 0))
        threads_v = resolve_threads(_resolve(threads, cfg, "threads", None))
        out_v = _resolve(out, cfg, "out", "locallaw_out")
        ens = _get_ensemble(ensemble_spec)
        if eta_raw == "nhalf":
            eta_rule = None
        else:
            try:
                eta_fixed = float(eta_raw)
            except ValueError:
                raise InputError("eta must be 'nhalf' or a float")
            eta_rule = lambda N: eta_fixed
        reports, entry_slope, avg_slope = sampler.local_law_sweep(
            ens, ns, e0_v, samples_v, seed=seed_v, eta_rule=eta_rule,
            threads=threads_v,
        )
        os.makedirs(out_v, exist_ok=True)
        rows = [
            [r.N, r.eta, r.entry_median, r.entry_q90, r.avg_median, r.avg_q90,
             (r.N * r.eta) ** -0.5, (r.N * r.eta) ** -1.0]
            for r in reports
        ]
        _write_csv(
            os.path.join(out_v, "locallaw.csv"),
            ["N", "eta", "entry_median", "entry_q90", "avg_median", "avg_q90",
             "scale_entry", "scale_avg"],
            rows,
        )
        _write_json(
            os.path.join(out_v, "locallaw_summary.json"),
            {
                "ensemble_hash": ens.hash_hex(),
                "entry_slope": entry_slope,
                "avg_slope": avg_slope,
            },
        )
        resolved = {
            "ensemble": ensemble_spec, "n_list": ns, "samples": samples_v,
            "e0": e0_v, "eta": eta_raw, "seed": seed_v,
        }
        _finish(
            out_v, "locallaw", resolved, seed_v, threads_v, t0,
            ["locallaw.csv", "locallaw_summary.json"],
        )

    _run_command(body)


@main.command()
@click.argument("ensemble_spec")
@click.option("--config", type=click.Path(), default=None)
@click.option("--n", "n_dim", type=int, default=None)
@click.option("--e0", type=float, default=None)
@click.option("--etas", default=None, help="comma-separated eta values")
@click.option("--samples", type=int, default=None)
@click.option("--b-matrix", default=None, help="JSON matrix, defaults to identity")
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
def twopoint(ensemble_spec, config, n_dim, e0, etas, samples, b_matrix, seed,
             threads, out):
    """Multiresolvent averages against the deterministic pole approximation."""

    def body():
        t0 = time.time()
        cfg = _load_config(config)
        n_v = int(_resolve(n_dim, cfg, "n", 512))
        e0_v = float(_resolve(e0, cfg, "e0", 0.0))
        etas_raw = _resolve(etas, cfg, "etas", "0.02,0.04,0.08")
        if isinstance(etas_raw, str):
            eta_list = [float(s) for s in etas_raw.split(",")]
        else:
            eta_list = [float(s) for s in etas_raw]
        samples_v = int(_resolve(samples, cfg, "samples", 20))
        seed_v = int(_resolve(seed, cfg, "seed", 0))
        threads_v = resolve_threads(_resolve(threads, cfg, "threads", None))
        out_v = _resolve(out, cfg, "out", "twopoint_out")
        ens = _get_ensemble(ensemble_spec)
        b_raw = _resolve(b_matrix, cfg, "b_matrix", None)
        if b_raw is None:
            B = np.eye(ens.n)
        else:
            if isinstance(b_raw, str):
                try:
                    b_raw = json.loads(b_raw)
                except json.JSONDecodeError as err:
                    raise InputError(f"bad b-matrix JSON: {err}")
            B = np.asarray(b_raw, dtype=float)
            if B.shape != (ens.n, ens.n):
                raise InputError(f"b-matrix must be {ens.n}x{ens.n}")
        study = sampler.two_point_study(
            ens, n_v, e0_v, eta_list, B, samples_v, seed=seed_v,
            threads=threads_v,
        )
        os.makedirs(out_v, exist_ok=True)
        rows = [
            [variant, eta, study.mean_rel_err(variant, eta),
             study.sem_rel_err(variant, eta)]
            for variant in sorted(study.rel_err)
            for eta in eta_list
        ]
        _write_csv(
            os.path.join(out_v, "twopoint.csv"),
            ["variant", "eta", "rel_err_mean", "rel_err_sem"],
            rows,
        )
        resolved = {
            "ensemble": ensemble_spec, "n": n_v, "e0": e0_v, "etas": eta_list,
            "samples": samples_v, "seed": seed_v,
            "b_matrix": B.tolist(),
        }
        _finish(out_v, "twopoint", resolved, seed_v, threads_v, t0, ["twopoint.csv"])

    _run_command(body)


@main.command(name="clt")
@click.argument("ensemble_spec")
@click.option("--config", type=click.Path(), default=None)
@click.option("--g", "g_tag", default=None, help="bump3 or gaussian_truncated")
@click.option("--sigma", type=float, default=None)
@click.option("--gamma", type=float, default=None)
@click.option("--e0", type=float, default=None)
@click.option("--n", "n_dim", type=int, default=None)
@click.option("--samples", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
def cmd_clt(ensemble_spec, config, g_tag, sigma, gamma, e0, n_dim, samples,
            seed, threads, out):
    """Monte Carlo run of the mesoscopic central-limit experiment.

    With --samples 0 the resolved configuration is echoed and nothing runs.
    """

    def body():
        t0 = time.time()
        cfg = _load_config(config)
        g_v = str(_resolve(g_tag, cfg, "g", "bump3"))
        gamma_v = float(_resolve(gamma, cfg, "gamma", 0.2))
        e0_v = float(_resolve(e0, cfg, "e0", 0.0))
        n_v = int(_resolve(n_dim, cfg, "n", 1024))
        samples_v = int(_resolve(samples, cfg, "samples", 400))
        seed_v = int(_resolve(seed, cfg, "seed", 0))
        threads_v = resolve_threads(_resolve(threads, cfg, "threads", None))
        out_v = _resolve(out, cfg, "out", "clt_out")
        if g_v == "bump3":
            sigma_v = float(_resolve(sigma, cfg, "sigma", 1.0))
            g = clt.bump3(sigma_v)
        elif g_v == "gaussian_truncated":
            sigma_v = float(_resolve(sigma, cfg, "sigma", 3.0))
            g = clt.gaussian_truncated(sigma_v)
        else:
            raise InputError(f"unknown test function tag '{g_v}'")
        resolved = {
            "ensemble": ensemble_spec, "g": g_v, "sigma": sigma_v,
            "gamma": gamma_v, "e0": e0_v, "n": n_v, "samples": samples_v,
            "seed": seed_v,
        }
        if samples_v == 0:
            click.echo(json.dumps(resolved, indent=1, sort_keys=True))
            return
        ens = _get_ensemble(ensemble_spec)
        report = clt.run_clt_experiment(
            ens, g, e0_v, gamma_v, n_v, samples_v, seed=seed_v,
            threads=threads_v,
        )
        os.makedirs(out_v, exist_ok=True)
        rows = [
            [i, v, f"{seed_v}:{i}"]
            for i, v in enumerate(report.values)
        ]
        _write_csv(
            os.path.join(out_v, "clt.csv"),
            ["sample_index", "statistic", "seed_substream"],
            rows,
        )
        _write_json(os.path.join(out_v, "clt.json"), report.to_dict())
        _finish(
            out_v, "clt", resolved, seed_v, threads_v, t0,
            ["clt.csv", "clt.json"],
        )

    _run_command(body)


if __name__ == "__main__":
    main()
