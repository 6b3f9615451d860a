"""Command line front end.

Subcommands: simulate, train, eval, ensemble-eval, ood, moments-grid,
attenuation-demo. Options may come from a config file (INI-style sections
named after the subcommand, flat key=value entries); explicit flags win
over config values. Unknown config keys are rejected.

Outputs land under the --out directory in data/, ckpt/ and reports/
subfolders. Files are written atomically after all computation succeeds,
so a failing run leaves no partial outputs. Exit codes: 0 success, 2 usage
or domain errors, 3 numeric divergence or overflow, 4 I/O problems.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ddpnkit import datagen, ensemble, metrics, moments, network, ood
from ddpnkit.errors import (
    DdpnError,
    DomainError,
    NumericDivergence,
    NumericOverflow,
    ShapeError,
    UsageError,
)
from ddpnkit.losses import FAMILIES, LossSpec


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"cannot parse boolean value {text!r}")


def _parse_widths(text: str) -> tuple:
    stripped = text.strip()
    if stripped in ("", "none"):
        return ()
    try:
        return tuple(int(part) for part in stripped.split(","))
    except ValueError as exc:
        raise UsageError(f"cannot parse hidden widths {text!r}") from exc


def _parse_floats(text: str) -> tuple:
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError as exc:
        raise UsageError(f"cannot parse float list {text!r}") from exc


# Option tables: name -> (parser, default, help). A default of REQUIRED marks
# options that must be supplied by flag or config file.
REQUIRED = object()

_TRAIN_OPTS = {
    "data": (str, REQUIRED, "dataset prefix (expects <prefix>_train.csv etc.)"),
    "family": (str, "double_poisson", f"predictive family, one of {', '.join(FAMILIES)}"),
    "beta": (float, 0.0, "beta weighting of the likelihood, in [0, 1]"),
    "epochs": (int, 200, "training epochs"),
    "batch_size": (int, 32, "mini-batch size"),
    "lr": (float, 1e-3, "initial learning rate (cosine-decayed to 0)"),
    "weight_decay": (float, 1e-5, "decoupled weight decay"),
    "seed": (int, 0, "base rng seed"),
    "gamma_bias_init": (float, 0.0, "initial bias of the log-dispersion head"),
    "hidden": (_parse_widths, (128, 128, 128, 64), "comma-separated hidden widths"),
    "members": (int, 1, "number of ensemble members"),
    "jobs": (int, 1, "concurrent member training processes"),
    "select_unscaled": (_parse_bool, False, "select checkpoints on the unscaled NLL"),
    "tag": (str, "model", "name stem for output files"),
}

_COMMAND_OPTS = {
    "simulate": {
        "process": (str, REQUIRED, f"one of {', '.join(datagen.PROCESSES)}"),
        "seed": (int, 0, "rng seed"),
        "n": (int, 2000, "total rows for single-size processes"),
        "n_train": (int, 800, "sine-conflation train rows"),
        "n_val": (int, 100, "sine-conflation val rows"),
        "n_test": (int, 100, "sine-conflation test rows"),
        "isolated_repeat": (int, 1, "repeat count of the beta-study isolated points"),
    },
    "train": _TRAIN_OPTS,
    "eval": {
        "ckpt": (str, REQUIRED, "checkpoint path"),
        "data": (str, REQUIRED, "dataset prefix, evaluated on <prefix>_test.csv"),
        "tag": (str, "eval", "name stem for output files"),
    },
    "ensemble-eval": {
        "manifest": (str, REQUIRED, "ensemble manifest path"),
        "data": (str, REQUIRED, "dataset prefix, evaluated on <prefix>_test.csv"),
        "moments_mode": (str, "efron_approx", "member variance mode"),
        "tag": (str, "ensemble", "name stem for output files"),
    },
    "ood": {
        "manifest": (str, REQUIRED, "ensemble manifest path"),
        "data": (str, REQUIRED, "ID dataset prefix, scores <prefix>_test.csv"),
        "ood_data": (str, None, "optional CSV of OOD inputs; overrides the range"),
        "ood_low": (float, 4.0 * math.pi, "lower edge of the OOD input range"),
        "ood_high": (float, 6.0 * math.pi, "upper edge of the OOD input range"),
        "ood_n": (int, 200, "number of OOD inputs drawn from the range"),
        "holdout": (float, 0.2, "ID fraction used to fit thresholds"),
        "n_repeats": (int, 10, "holdout resampling repeats"),
        "alpha_points": (int, 101, "size of the alpha sweep grid"),
        "seed": (int, 0, "rng seed for holdout resampling and OOD draws"),
        "tag": (str, "ood", "name stem for output files"),
    },
    "moments-grid": {
        "mu_min": (float, 0.01, "smallest target mean"),
        "mu_max": (float, 100.0, "largest target mean"),
        "mu_points": (int, 25, "grid points along the mean axis"),
        "var_min": (float, 0.01, "smallest target variance"),
        "var_max": (float, 100.0, "largest target variance"),
        "var_points": (int, 25, "grid points along the variance axis"),
        "n_terms": (int, 100, "partial-sum length"),
        "tag": (str, "moments", "name stem for output files"),
    },
    "attenuation-demo": {
        "seed": (int, 0, "rng seed for data and training"),
        "beta": (float, 1.0, "beta weighting of the loss"),
        "gamma_bias_init": (float, 0.0, "initial bias of the log-dispersion head"),
        "epochs": (int, 150, "training epochs"),
        "batch_size": (int, 32, "mini-batch size"),
        "lr": (float, 1e-3, "initial learning rate"),
        "weight_decay": (float, 1e-5, "decoupled weight decay"),
        "hidden": (_parse_widths, (64, 64), "comma-separated hidden widths"),
        "n": (int, 500, "beta-study rows before isolated points"),
        "isolated_repeat": (int, 1, "repeat count of the isolated points"),
        "probe_x": (_parse_floats, (1.0, 10.0), "comma-separated probe covariates"),
        "tag": (str, "attenuation", "name stem for output files"),
    },
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddpnkit",
        description="Heteroscedastic count regression with the Double Poisson distribution.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, opts in _COMMAND_OPTS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None, help="INI config file with a "
                       f"[{command}] section")
        p.add_argument("--out", default=".", help="output directory root")
        for name, (_, _, help_text) in opts.items():
            flag = "--" + name.replace("_", "-")
            p.add_argument(flag, default=None, help=help_text)
    return parser


def _merge_options(command: str, args: argparse.Namespace) -> dict:
    """Combine flags, config file values and defaults; flags win."""
    opts = _COMMAND_OPTS[command]
    from_config = {}
    if args.config is not None:
        cp = configparser.ConfigParser(default_section="_no_defaults")
        if not cp.read(args.config):
            raise UsageError(f"cannot read config file {args.config}")
        if cp.has_section(command):
            for key, value in cp.items(command):
                key = key.replace("-", "_")
                if key == "out":
                    from_config[key] = value
                    continue
                if key not in opts:
                    raise UsageError(f"unknown config key {key!r} in section [{command}]")
                from_config[key] = value
    merged = {}
    for name, (parse_fn, default, _) in opts.items():
        raw = getattr(args, name)
        if raw is None:
            raw = from_config.get(name)
        if raw is None:
            if default is REQUIRED:
                raise UsageError(f"missing required option --{name.replace('_', '-')}")
            merged[name] = default
        else:
            try:
                merged[name] = parse_fn(raw) if isinstance(raw, str) else raw
            except (ValueError, TypeError) as exc:
                raise UsageError(f"bad value {raw!r} for --{name.replace('_', '-')}") from exc
    out = args.out if args.out != "." or "out" not in from_config else from_config["out"]
    merged["out"] = out
    return merged


def _write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_json(path: str, payload) -> None:
    _write_text(path, json.dumps(payload, indent=2) + "\n")


def _outdir(root: str, kind: str) -> str:
    path = os.path.join(root, kind)
    os.makedirs(path, exist_ok=True)
    return path


def _dataset_for(opts: dict):
    process = opts["process"]
    if process not in datagen.PROCESSES:
        raise UsageError(f"unknown process {process!r}")
    seed = opts["seed"]
    if process == "sine-conflation":
        return datagen.gen_sine_conflation(opts["n_train"], opts["n_val"], opts["n_test"], seed)
    if process == "beta-study":
        return datagen.gen_beta_study(opts["n"], seed, opts["isolated_repeat"])
    return datagen.PROCESSES[process](opts["n"], seed)


def cmd_simulate(opts: dict) -> int:
    ds, split = _dataset_for(opts)
    data_dir = _outdir(opts["out"], "data")
    prefix = os.path.join(data_dir, f"{ds.process}_seed{opts['seed']}")
    paths = datagen.write_split_csvs(ds, split, prefix)
    for path in paths:
        print(path)
    return 0


def _member_config(opts: dict, member: int) -> network.TrainConfig:
    spec = LossSpec(opts["family"], opts["beta"])
    return network.TrainConfig(
        loss=spec,
        epochs=opts["epochs"],
        batch_size=opts["batch_size"],
        lr=opts["lr"],
        weight_decay=opts["weight_decay"],
        seed=opts["seed"] + member,
        gamma_bias_init=opts["gamma_bias_init"],
        hidden_widths=opts["hidden"],
        select_unscaled=opts["select_unscaled"],
    )


def _train_one(payload):
    member, ds, split, config = payload
    weights, report = network.train(ds, split, config)
    return member, weights, report


def cmd_train(opts: dict) -> int:
    ds, split = datagen.read_split_csvs(opts["data"])
    payloads = [
        (m, ds, split, _member_config(opts, m)) for m in range(opts["members"])
    ]
    if opts["jobs"] > 1 and opts["members"] > 1:
        with ProcessPoolExecutor(max_workers=opts["jobs"]) as pool:
            results = sorted(pool.map(_train_one, payloads), key=lambda r: r[0])
    else:
        results = [_train_one(p) for p in payloads]

    ckpt_dir = _outdir(opts["out"], "ckpt")
    reports_dir = _outdir(opts["out"], "reports")
    member_files = []
    report_payload = []
    for member, weights, report in results:
        path = os.path.join(ckpt_dir, f"{opts['tag']}_member{member}.ckpt")
        meta = network.train_meta(report.config, ds.xs.shape[1])
        member_files.append((path, network.render_checkpoint(weights, meta)))
        report_payload.append({
            "member": member,
            "seed": report.seed,
            "best_epoch": report.best_epoch,
            "train_loss": report.train_loss,
            "val_loss": report.val_loss,
            "wall_time": report.wall_time,
        })
    for path, text in member_files:
        _write_text(path, text)
    manifest_path = os.path.join(ckpt_dir, f"{opts['tag']}.manifest")
    spec = LossSpec(opts["family"], opts["beta"])
    names = [os.path.basename(p) for p, _ in member_files]
    ensemble.save_manifest(names, spec, manifest_path)
    _write_json(os.path.join(reports_dir, f"{opts['tag']}_train.json"),
                {"family": opts["family"], "beta": opts["beta"], "members": report_payload})
    print(manifest_path)
    return 0


def cmd_eval(opts: dict) -> int:
    weights, meta = network.load_checkpoint(opts["ckpt"])
    spec = LossSpec(meta["family"], float(meta.get("beta", 0.0)))
    ds, split = datagen.read_split_csvs(opts["data"])
    test_x, test_y = ds.xs[split.test], ds.ys[split.test]
    if test_y.size == 0:
        raise DomainError(f"no test rows found under prefix {opts['data']}")
    dists_list = ensemble.member_distributions(weights, spec, test_x)
    record = metrics.evaluate(dists_list, test_y)
    reports_dir = _outdir(opts["out"], "reports")
    path = os.path.join(reports_dir, f"{opts['tag']}_metrics.json")
    _write_json(path, record.summary())
    print(json.dumps(record.summary()))
    return 0


def cmd_ensemble_eval(opts: dict) -> int:
    ens = ensemble.load_ensemble(opts["manifest"])
    ds, split = datagen.read_split_csvs(opts["data"])
    test_x, test_y = ds.xs[split.test], ds.ys[split.test]
    if test_y.size == 0:
        raise DomainError(f"no test rows found under prefix {opts['data']}")
    mode = opts["moments_mode"]
    dists_list = [ensemble.mixture_predict(ens, row) for row in test_x]
    variances = ensemble.variance_scores(ens, test_x, mode)
    record = metrics.evaluate(dists_list, test_y, variances=variances)
    table = ensemble.predict_table(ens, test_x, mode)
    lines = ["x,mean,aleatoric,epistemic,q025,q975"]
    for i in range(test_x.shape[0]):
        lines.append(",".join(repr(float(v)) for v in (
            test_x[i, 0], table["mean"][i], table["aleatoric"][i],
            table["epistemic"][i], table["q025"][i], table["q975"][i],
        )))
    reports_dir = _outdir(opts["out"], "reports")
    _write_json(os.path.join(reports_dir, f"{opts['tag']}_metrics.json"), record.summary())
    _write_text(os.path.join(reports_dir, f"{opts['tag']}_decomposition.csv"),
                "\n".join(lines) + "\n")
    print(json.dumps(record.summary()))
    return 0


def cmd_ood(opts: dict) -> int:
    ens = ensemble.load_ensemble(opts["manifest"])
    ds, split = datagen.read_split_csvs(opts["data"])
    id_x = ds.xs[split.test]
    if id_x.shape[0] == 0:
        raise DomainError(f"no test rows found under prefix {opts['data']}")
    if opts["ood_data"] is not None:
        ood_x, _ = datagen.read_dataset_csv(opts["ood_data"])
    else:
        rng = np.random.default_rng(opts["seed"])
        ood_x = rng.uniform(opts["ood_low"], opts["ood_high"], opts["ood_n"])[:, None]
    config = ood.OODProtocolConfig(
        holdout_fraction=opts["holdout"],
        n_repeats=opts["n_repeats"],
        alphas=tuple(np.linspace(0.0, 1.0, opts["alpha_points"])),
        seed=opts["seed"],
    )
    report = ood.run_ood_eval(ens, id_x, ood_x, config)
    reports_dir = _outdir(opts["out"], "reports")
    _write_json(os.path.join(reports_dir, f"{opts['tag']}_ood.json"), report.to_json_dict())
    print(json.dumps(report.to_json_dict()))
    return 0


def cmd_moments_grid(opts: dict) -> int:
    mu_axis = np.logspace(math.log10(opts["mu_min"]), math.log10(opts["mu_max"]),
                          opts["mu_points"])
    var_axis = np.logspace(math.log10(opts["var_min"]), math.log10(opts["var_max"]),
                           opts["var_points"])
    grid = moments.moments_grid(mu_axis, var_axis, opts["n_terms"])
    lines = ["mu0,var0,eps1,eps2"]
    for i, mu0 in enumerate(grid.mu_values):
        for j, var0 in enumerate(grid.var_values):
            lines.append(",".join(repr(float(v)) for v in (
                mu0, var0, grid.eps1[i, j], grid.eps2[i, j],
            )))
    reports_dir = _outdir(opts["out"], "reports")
    path = os.path.join(reports_dir, f"{opts['tag']}_grid.csv")
    _write_text(path, "\n".join(lines) + "\n")
    print(path)
    return 0


def cmd_attenuation_demo(opts: dict) -> int:
    ds, split = datagen.gen_beta_study(opts["n"], opts["seed"], opts["isolated_repeat"])
    config = network.TrainConfig(
        loss=LossSpec("double_poisson", opts["beta"]),
        epochs=opts["epochs"],
        batch_size=opts["batch_size"],
        lr=opts["lr"],
        weight_decay=opts["weight_decay"],
        seed=opts["seed"],
        gamma_bias_init=opts["gamma_bias_init"],
        hidden_widths=opts["hidden"],
    )
    probes = np.array(opts["probe_x"], dtype=float)[:, None]
    rows = []

    def record(epoch, weights):
        heads = network.forward_batch(weights, probes)
        rows.append((epoch, np.exp(heads[:, 0]).copy(), np.exp(heads[:, 1]).copy()))

    network.train(ds, split, config, epoch_hook=record)
    header = ["epoch"]
    for x in probes[:, 0]:
        header.append(f"mu_at_{x:g}")
        header.append(f"gamma_at_{x:g}")
    lines = [",".join(header)]
    for epoch, mus, gammas in rows:
        cells = [str(epoch)]
        for m, g in zip(mus, gammas):
            cells.append(repr(float(m)))
            cells.append(repr(float(g)))
        lines.append(",".join(cells))
    reports_dir = _outdir(opts["out"], "reports")
    path = os.path.join(reports_dir, f"{opts['tag']}_trace.csv")
    _write_text(path, "\n".join(lines) + "\n")
    print(path)
    return 0


_HANDLERS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "eval": cmd_eval,
    "ensemble-eval": cmd_ensemble_eval,
    "ood": cmd_ood,
    "moments-grid": cmd_moments_grid,
    "attenuation-demo": cmd_attenuation_demo,
}


def execute(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    opts = _merge_options(args.command, args)
    return _HANDLERS[args.command](opts)


def main(argv=None) -> int:
    try:
        return execute(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericDivergence, NumericOverflow) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except (network.CheckpointFormatError, ensemble.ManifestFormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    except (DomainError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DdpnError as exc:  # pragma: no cover - safety net
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
