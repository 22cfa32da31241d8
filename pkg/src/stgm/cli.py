"""Command line driver: fit, simulate, predict, integrate.

All commands take a JSON configuration file and write plain-text artifacts
into an output directory.  Outputs carry no timestamps or machine state,
so a rerun with the same inputs and seed reproduces them byte for byte.

Exit codes: 0 success, 1 configuration or input error, 2 estimation did
not converge (artifacts are still written), 3 every prediction row failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .errors import ConfigError, FitError, StgmError
from .inference import (
    FitSettings,
    evaluate_fit,
    fit,
    integrate_output,
    make_spec,
    predict,
    simulate_response,
)
from .spatial import SingleSiteDomain, read_areal, read_mesh, read_stream

__all__ = ["main"]


def _fmt(value) -> str:
    """Shortest round-trip decimal form; NaN renders empty."""
    v = float(value)
    if np.isnan(v):
        return ""
    return repr(v)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _read_csv(path) -> pd.DataFrame:
    # pandas' default float parser can be one ulp off; exact parsing keeps
    # re-evaluation of stored estimates bitwise reproducible
    return pd.read_csv(path, float_precision="round_trip")


def _load_config(path: str) -> tuple[dict, Path]:
    cfg_path = Path(path)
    if not cfg_path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(cfg_path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg, cfg_path.parent


def _resolve(base: Path, name) -> Path:
    p = Path(name)
    return p if p.is_absolute() else base / p


def _build_domain(cfg: dict, base: Path):
    spatial = cfg.get("spatial")
    if spatial is None:
        return None
    if not isinstance(spatial, dict) or "kind" not in spatial:
        raise ConfigError('"spatial" must be an object with a "kind"')
    kind = spatial["kind"]
    if kind == "single":
        return SingleSiteDomain()
    if "file" not in spatial:
        raise ConfigError(f'spatial kind {kind!r} needs a "file"')
    path = _resolve(base, spatial["file"])
    if not path.exists():
        raise ConfigError(f"spatial file not found: {path}")
    readers = {"mesh": read_mesh, "areal": read_areal, "stream": read_stream}
    if kind not in readers:
        raise ConfigError(
            f"unknown spatial kind {kind!r} (mesh, areal, stream, single)"
        )
    return readers[kind](path)


def _read_model_text(base: Path, value, label: str) -> str | None:
    if value is None:
        return None
    if not isinstance(value, str):
        raise ConfigError(f'"{label}" must be a path to a notation file')
    path = _resolve(base, value)
    if not path.exists():
        raise ConfigError(f"{label} file not found: {path}")
    return path.read_text()


def _build_spec(cfg: dict, base: Path, data: pd.DataFrame | None = None):
    if "formula" not in cfg:
        raise ConfigError('config needs a "formula"')
    if data is None:
        if "data" not in cfg:
            raise ConfigError('config needs a "data" CSV path')
        data_path = _resolve(base, cfg["data"])
        if not data_path.exists():
            raise ConfigError(f"data file not found: {data_path}")
        data = _read_csv(data_path)

    columns = cfg.get("columns", {})
    if not isinstance(columns, dict):
        raise ConfigError('"columns" must be an object')
    optimizer = cfg.get("optimizer", {})
    if not isinstance(optimizer, dict):
        raise ConfigError('"optimizer" must be an object')

    spec = make_spec(
        data=data,
        formula=cfg["formula"],
        variables=cfg.get("variables"),
        times=cfg.get("times"),
        family=cfg.get("family", "gaussian"),
        sem=_read_model_text(base, cfg.get("sem"), "sem"),
        dsem=_read_model_text(base, cfg.get("dsem"), "dsem"),
        domain=_build_domain(cfg, base),
        variable_column=columns.get("variable"),
        time_column=columns.get("time"),
        space_columns=columns.get("space"),
        transforms=optimizer.get("transforms"),
        fixed=optimizer.get("fixed"),
        projection=optimizer.get("projection"),
    )
    return spec


def _settings_from(cfg: dict, threads: int | None) -> FitSettings:
    optimizer = cfg.get("optimizer", {})
    settings = FitSettings()
    mapping = {
        "max_iter": int,
        "gtol": float,
        "fd_step": float,
        "hess_step": float,
        "se": bool,
        "inner_tol": float,
        "inner_max_iter": int,
    }
    for key, cast in mapping.items():
        if key in optimizer:
            setattr(settings, key, cast(optimizer[key]))
    if threads is not None:
        settings.threads = max(1, int(threads))
    return settings


def _out_dir(cfg: dict, override: str | None) -> Path:
    out = override if override is not None else cfg.get("out")
    if out is None:
        raise ConfigError('config needs an "out" directory (or pass --out)')
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_fit_artifacts(out: Path, spec, result) -> None:
    rows = []
    for i, name in enumerate(result.names):
        rows.append(
            [
                name,
                _fmt(result.estimates[i]),
                _fmt(result.ses[i]),
                "1" if result.fixed_mask[i] else "0",
            ]
        )
    _write_csv(out / "estimates.csv", ["parameter", "estimate", "se", "fixed"], rows)

    path_rows = []
    for label, ram in (("sem", spec.sem_ram), ("dsem", spec.dsem_ram)):
        if ram is None:
            continue
        for term in ram.terms:
            if term.fixed:
                estimate = term.value
                pname = ""
            else:
                pname = f"{label}:{term.param}"
                estimate = result.estimates[spec.param_position(pname)]
            path_rows.append(
                [
                    label,
                    term.src,
                    str(term.heads),
                    term.dst,
                    str(term.lag),
                    pname,
                    "1" if term.fixed else "0",
                    _fmt(estimate),
                ]
            )
    _write_csv(
        out / "paths.csv",
        ["model", "src", "heads", "dst", "lag", "parameter", "fixed", "estimate"],
        path_rows,
    )

    effects = []
    if result.omega is not None:
        for c, vname in enumerate(spec.variables):
            for s in range(spec.n_sites):
                effects.append(["omega", str(s), vname, _fmt(result.omega[s, c])])
    if result.epsilon is not None:
        for t, tval in enumerate(spec.times):
            for c, vname in enumerate(spec.variables):
                col = t * spec.n_vars + c
                for s in range(spec.n_sites):
                    effects.append(
                        [
                            "epsilon",
                            str(s),
                            f"{vname}@{tval}",
                            _fmt(result.epsilon[s, col]),
                        ]
                    )
    for blk, gamma in zip(spec.design.smooths, result.gammas):
        for j, value in enumerate(gamma):
            effects.append([f"smooth:{blk.name}", str(j), "", _fmt(value)])
    _write_csv(
        out / "random_effects.csv", ["block", "index", "coordinate", "value"], effects
    )

    payload = {
        "version": __version__,
        "loglik": result.loglik,
        "aic": result.aic,
        "n_free_params": int(np.sum(~result.fixed_mask)),
        "n_obs": spec.n_obs,
        "n_latent": spec.n_latent,
        "convergence": {
            "converged": bool(result.convergence["converged"]),
            "iterations": int(result.convergence["iterations"]),
            "grad_norm": _json_float(result.convergence["grad_norm"]),
            "n_evals": int(result.convergence["n_evals"]),
            "message": str(result.convergence["message"]),
        },
    }
    if result.cov_free is not None:
        payload["covariance"] = {
            "parameters": [p.name for p in spec.free_params],
            "matrix": [[float(v) for v in row] for row in result.cov_free],
        }
    with open(out / "fit.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _json_float(value: float):
    v = float(value)
    return None if np.isnan(v) else v


def _load_fitted(cfg: dict, base: Path, fit_dir: Path):
    """Rebuild the model specification and re-evaluate at the stored estimates."""
    est_path = fit_dir / "estimates.csv"
    if not est_path.exists():
        raise ConfigError(f"no estimates.csv under {fit_dir}; run fit first")
    spec = _build_spec(cfg, base)
    table = _read_csv(est_path)
    mapping = dict(zip(table["parameter"], table["estimate"]))
    theta = spec.theta_from_mapping(mapping)
    result = evaluate_fit(spec, theta)
    json_path = fit_dir / "fit.json"
    if json_path.exists():
        with open(json_path) as fh:
            payload = json.load(fh)
        cov = payload.get("covariance")
        if cov is not None:
            names = [p.name for p in spec.free_params]
            if cov.get("parameters") == names:
                result.cov_free = np.asarray(cov["matrix"], dtype=float)
    return result


def cmd_fit(cfg: dict, base: Path, args) -> int:
    out = _out_dir(cfg, args.out)
    spec = _build_spec(cfg, base)
    settings = _settings_from(cfg, args.threads)
    result = fit(spec, settings)
    _write_fit_artifacts(out, spec, result)
    return 0 if result.convergence["converged"] else 2


def cmd_simulate(cfg: dict, base: Path, args) -> int:
    out = _out_dir(cfg, args.out)
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is None:
        raise ConfigError('simulate needs a "seed" (or pass --seed)')

    if "design" in cfg:
        design_path = _resolve(base, cfg["design"])
        if not design_path.exists():
            raise ConfigError(f"design file not found: {design_path}")
        frame = _read_csv(design_path)
    else:
        frame = _default_design(cfg, base)
    response = cfg["formula"].split("~")[0].strip() if "formula" in cfg else None
    if response is None:
        raise ConfigError('config needs a "formula"')
    frame = frame.copy()
    if response not in frame.columns:
        frame[response] = 0.0

    spec = _build_spec(cfg, base, data=frame)
    truth: dict[str, float] = {}
    if "truth" in cfg:
        truth_path = _resolve(base, cfg["truth"])
        if not truth_path.exists():
            raise ConfigError(f"truth file not found: {truth_path}")
        table = _read_csv(truth_path)
        if not {"parameter", "value"} <= set(table.columns):
            raise ConfigError("truth file needs parameter,value columns")
        truth = dict(zip(table["parameter"], table["value"]))
    theta = spec.theta_from_mapping(truth)
    y, _ = simulate_response(spec, theta, int(seed))
    frame[response] = y
    frame.to_csv(out / "data.csv", index=False)

    rows = [
        [name, _fmt(theta[i])] for i, name in enumerate(spec.param_names)
    ]
    _write_csv(out / "sim_params.csv", ["parameter", "value"], rows)
    return 0


def _default_design(cfg: dict, base: Path) -> pd.DataFrame:
    """All sites x variables x times, with domain coordinates as columns."""
    domain = _build_domain(cfg, base)
    if domain is None:
        domain = SingleSiteDomain()
    variables = cfg.get("variables")
    if not variables:
        raise ConfigError('simulate without a design file needs "variables"')
    times = cfg.get("times", [None])
    columns = cfg.get("columns", {})
    var_col = columns.get("variable", "variable")
    time_col = columns.get("time", "time")
    space = columns.get("space")
    node_cols = domain.node_frame_columns()
    node_names = list(node_cols)
    if space is not None:
        if len(space) != len(node_names):
            raise ConfigError(
                f"domain provides {len(node_names)} coordinate column(s); "
                f'"columns.space" names {len(space)}'
            )
        node_names = list(space)
    include_var = len(variables) > 1 or "variable" in columns
    records = []
    n_sites = domain.n_sites
    for t in times:
        for v in variables:
            for s in range(n_sites):
                rec = {
                    name: node_cols[key][s]
                    for name, key in zip(node_names, node_cols)
                }
                if include_var:
                    rec[var_col] = v
                if t is not None:
                    rec[time_col] = t
                records.append(rec)
    return pd.DataFrame.from_records(records)


def _predict_rows(result, grid: pd.DataFrame):
    """Component predictions per row with per-row error capture.

    The whole grid is tried at once first; only on failure does the slow
    row-by-row pass run so valid rows still produce output.
    """
    try:
        table = predict(result, grid, scale="component")
        return list(table.to_dict("records")), [""] * len(grid)
    except StgmError:
        pass
    records: list[dict | None] = []
    errors: list[str] = []
    for i in range(len(grid)):
        try:
            pred = predict(result, grid.iloc[[i]], scale="component")
            records.append(pred.to_dict("records")[0])
            errors.append("")
        except StgmError as exc:
            records.append(None)
            errors.append(str(exc))
    return records, errors


def cmd_predict(cfg: dict, base: Path, args) -> int:
    out = _out_dir(cfg, args.out)
    fit_dir = Path(cfg.get("fit_dir", out))
    if "grid" not in cfg:
        raise ConfigError('predict needs a "grid" CSV path')
    grid_path = _resolve(base, cfg["grid"])
    if not grid_path.exists():
        raise ConfigError(f"grid file not found: {grid_path}")
    grid = _read_csv(grid_path)
    result = _load_fitted(cfg, base, fit_dir)

    records, errors = _predict_rows(result, grid)
    header = [
        "row",
        "link",
        "response",
        "fixed",
        "smooth",
        "omega",
        "epsilon",
        "offset",
        "error",
    ]
    out_rows = []
    n_failed = 0
    for i, rec in enumerate(records):
        if rec is None:
            n_failed += 1
            out_rows.append([str(i), "", "", "", "", "", "", "", errors[i]])
        else:
            out_rows.append(
                [
                    str(i),
                    _fmt(rec["link"]),
                    _fmt(rec["response"]),
                    _fmt(rec["fixed"]),
                    _fmt(rec["smooth"]),
                    _fmt(rec["omega"]),
                    _fmt(rec["epsilon"]),
                    _fmt(rec["offset"]),
                    "",
                ]
            )
    _write_csv(out / "predictions.csv", header, out_rows)
    if n_failed == len(grid) and len(grid) > 0:
        print("error: prediction failed for every grid row", file=sys.stderr)
        return 3
    if n_failed:
        print(
            f"warning: prediction failed for {n_failed} of {len(grid)} rows",
            file=sys.stderr,
        )
    return 0


def cmd_integrate(cfg: dict, base: Path, args) -> int:
    out = _out_dir(cfg, args.out)
    fit_dir = Path(cfg.get("fit_dir", out))
    if "grid" not in cfg:
        raise ConfigError('integrate needs a "grid" CSV path')
    grid_path = _resolve(base, cfg["grid"])
    if not grid_path.exists():
        raise ConfigError(f"grid file not found: {grid_path}")
    grid = _read_csv(grid_path)
    weight_col = cfg.get("weight_column", "weight")
    if weight_col not in grid.columns:
        raise ConfigError(f"grid is missing the weight column {weight_col!r}")
    result = _load_fitted(cfg, base, fit_dir)
    spec = result.spec

    time_col = spec.time_column
    if time_col is not None and time_col in grid.columns:
        groups = [(tv, grid[grid[time_col] == tv]) for tv in sorted(grid[time_col].unique())]
    else:
        groups = [("", grid)]

    rows = []
    n_failed_rows = 0
    n_total_rows = len(grid)
    for tval, sub in groups:
        try:
            res = integrate_output(
                result, sub, sub[weight_col].to_numpy(dtype=float)
            )
            rows.append(
                [str(tval), _fmt(res.estimate), _fmt(res.se), res.bias_correction]
            )
        except StgmError as exc:
            n_failed_rows += len(sub)
            rows.append([str(tval), "", "", f"error: {exc}"])
    _write_csv(out / "index.csv", ["time", "estimate", "se", "bias_correction"], rows)
    if n_failed_rows == n_total_rows and n_total_rows > 0:
        print("error: integration failed for every grid row", file=sys.stderr)
        return 3
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="stgm",
        description=(
            "Fit multivariate spatio-temporal GMRF models described by "
            "arrow notation."
        ),
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("fit", "estimate parameters and write fit artifacts"),
        ("simulate", "draw data from the model at given parameter values"),
        ("predict", "evaluate fitted predictions on a grid CSV"),
        ("integrate", "area-weighted response totals over a grid CSV"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="path to a JSON configuration file")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="seed override (simulate)")
        p.add_argument("--threads", type=int, help="finite-difference worker threads")

    args = parser.parse_args(argv)
    handlers = {
        "fit": cmd_fit,
        "simulate": cmd_simulate,
        "predict": cmd_predict,
        "integrate": cmd_integrate,
    }
    try:
        cfg, base = _load_config(args.config)
        return handlers[args.command](cfg, base, args)
    except FitError as exc:
        print(f"error: estimation: {exc}", file=sys.stderr)
        return 2
    except StgmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
