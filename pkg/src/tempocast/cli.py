"""Command-line entry points.

Subcommands: generate-data, train, forecast, ablate, report-params.
Every command takes `--config <file>` plus `--<key> <value>` overrides for
any schema key, and echoes the fully resolved config into each artifact it
writes. Exit codes: 0 ok, 1 config error, 2 data error, 3 divergence.
"""

import argparse
import json
import os
import sys

from .ablation import format_ablation_table, run_ablation
from .config import (
    SCHEMA,
    build_model_config,
    build_series,
    build_train_config,
    load_config,
    parse_int_list,
    resolve_config,
    serialize_config,
)
from .data import make_windows, split_windows, write_csv
from .errors import ConfigError, DataError, DivergenceError, LengthError, TokenizeError
from .model import (
    ForecastModel,
    evaluate_rollout,
    fit,
    format_param_report,
    param_report,
)


def _echo_comments(cfg):
    return ["# " + line for line in serialize_config(cfg).splitlines()]


def _write_json(path, payload):
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _dataset_name(cfg):
    if cfg["data.source"] == "csv":
        base = os.path.basename(cfg["data.path"])
        return os.path.splitext(base)[0] or "csv"
    return "synthetic"


# ---- commands ----


def cmd_generate_data(cfg, out_dir, cache_path):
    series = build_series({**cfg, "data.source": "synthetic"})
    path = os.path.join(out_dir, "synthetic.csv")
    write_csv(path, series, comments=_echo_comments(cfg))
    print("wrote %s (%d vars x %d steps)" % (path, series.values.shape[0], series.values.shape[1]))
    return 0


def cmd_train(cfg, out_dir, cache_path):
    series = build_series(cfg)
    mcfg = build_model_config(cfg)
    tcfg = build_train_config(cfg)
    horizon = cfg["train.horizon"]
    windows = make_windows(series, mcfg.lookback, horizon, stride=cfg["train.window_stride"])
    train, val, test = split_windows(windows, cfg["train.split"])
    if not train:
        raise ConfigError("no training windows (series length %d, lookback %d)" % (series.values.shape[1], mcfg.lookback))
    model = ForecastModel(mcfg, cache_path=cache_path)
    history = fit(model, train, val, tcfg)
    report = param_report(model.registry)
    metrics = {
        "config": cfg,
        "history": history,
        "params": report,
        "n_windows": {"train": len(train), "val": len(val), "test": len(test)},
    }
    if test:
        mse, mae = evaluate_rollout(model, test, horizon)
        metrics["test"] = {"mse": mse, "mae": mae, "horizon": horizon}
    ckpt = os.path.join(out_dir, "checkpoint.bin")
    model.save(ckpt, extra_meta={"config": cfg})
    _write_json(os.path.join(out_dir, "metrics.json"), metrics)
    print("wrote %s and metrics.json" % ckpt)
    print("train loss %.6f -> %.6f over %d steps" % (history["train_loss"][0], history["train_loss"][-1], history["steps"]))
    if test:
        print("test rollout mse %.6f mae %.6f (horizon %d)" % (metrics["test"]["mse"], metrics["test"]["mae"], horizon))
    return 0


def cmd_forecast(cfg, out_dir, cache_path, checkpoint):
    if not checkpoint:
        raise ConfigError("forecast requires --checkpoint <file>")
    model, _ = ForecastModel.load(checkpoint, cache_path=cache_path)
    series = build_series(cfg)
    lookback = model.config.lookback
    n_steps = series.values.shape[1]
    if n_steps < lookback:
        raise DataError("series has %d steps; model lookback is %d" % (n_steps, lookback))
    horizon = cfg["forecast.horizon"]
    history = series.values[:, -lookback:]
    t0 = series.timestamp(n_steps - lookback)
    preds = model.forecast(history, t0, series.granularity, horizon)
    path = os.path.join(out_dir, "forecast.csv")
    with open(path, "w", newline="") as f:
        for line in _echo_comments(cfg):
            f.write(line + "\n")
        f.write("date,variable,value\n")
        for h in range(horizon):
            stamp = series.timestamp(n_steps + h).strftime("%Y-%m-%d %H:%M:%S")
            for v, name in enumerate(series.names):
                f.write("%s,%s,%s\n" % (stamp, name, repr(float(preds[v, h]))))
    print("wrote %s (%d vars x %d steps ahead)" % (path, preds.shape[0], horizon))
    return 0


def cmd_ablate(cfg, out_dir, cache_path):
    series = build_series(cfg)
    variants = tuple(p.strip() for p in cfg["ablate.variants"].split(",") if p.strip())
    if not variants:
        raise ConfigError("ablate.variants is empty")
    seeds = parse_int_list(cfg["ablate.seeds"], "ablate.seeds")
    if not seeds:
        raise ConfigError("ablate.seeds is empty")
    result = run_ablation(
        series,
        _dataset_name(cfg),
        build_model_config(cfg),
        build_train_config(cfg),
        cfg["train.horizon"],
        variants=variants,
        seeds=seeds,
        window_stride=cfg["ablate.window_stride"],
        split_scheme=cfg["ablate.split"],
        cache_path=cache_path,
    )
    result["config"] = cfg
    _write_json(os.path.join(out_dir, "ablation.json"), result)
    table = format_ablation_table(result)
    with open(os.path.join(out_dir, "ablation.txt"), "w") as f:
        for line in _echo_comments(cfg):
            f.write(line + "\n")
        f.write(table + "\n")
    print(table)
    print("wrote %s and ablation.txt" % os.path.join(out_dir, "ablation.json"))
    return 0


def cmd_report_params(cfg, out_dir, cache_path, checkpoint):
    if checkpoint:
        model, _ = ForecastModel.load(checkpoint, cache_path=cache_path)
    else:
        model = ForecastModel(build_model_config(cfg), cache_path=cache_path)
    report = param_report(model.registry)
    print(format_param_report(report))
    if out_dir:
        _write_json(os.path.join(out_dir, "params.json"), {"config": cfg, "params": report})
    return 0


# ---- argument handling ----

_COMMANDS = {
    "generate-data": (cmd_generate_data, False),
    "train": (cmd_train, False),
    "forecast": (cmd_forecast, True),
    "ablate": (cmd_ablate, False),
    "report-params": (cmd_report_params, True),
}


def _build_parser():
    parser = argparse.ArgumentParser(prog="tempocast", description="Prompt-conditioned patch forecaster")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, takes_checkpoint) in _COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="config file of key = value lines")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, help="override the top-level seed")
        p.add_argument("--bank-cache", dest="bank_cache", help="on-disk prompt-bank cache file")
        if takes_checkpoint:
            p.add_argument("--checkpoint", help="model checkpoint to load")
    return parser


def _parse_overrides(rest):
    """Turn leftover `--some.key value` (or `--some.key=value`) pairs into a dict."""
    overrides = {}
    i = 0
    while i < len(rest):
        tok = rest[i]
        if not tok.startswith("--"):
            raise ConfigError("unexpected argument %r (overrides look like --key value)" % tok)
        body = tok[2:]
        if "=" in body:
            key, _, value = body.partition("=")
            i += 1
        else:
            key = body
            if i + 1 >= len(rest):
                raise ConfigError("override --%s is missing a value" % key)
            value = rest[i + 1]
            i += 2
        if key not in SCHEMA:
            raise ConfigError("unknown config key %r" % key)
        overrides[key] = value
    return overrides


def main(argv=None):
    parser = _build_parser()
    args, rest = parser.parse_known_args(argv)
    fn, takes_checkpoint = _COMMANDS[args.command]
    try:
        layers = []
        if args.config:
            layers.append(load_config(args.config))
        layers.append(_parse_overrides(rest))
        if args.seed is not None:
            layers.append({"seed": args.seed})
        cfg = resolve_config(*layers)
        os.makedirs(args.out, exist_ok=True)
        if takes_checkpoint:
            return fn(cfg, args.out, args.bank_cache, args.checkpoint)
        return fn(cfg, args.out, args.bank_cache)
    except ConfigError as e:
        print("config error: %s" % e, file=sys.stderr)
        return 1
    except (DataError, TokenizeError, LengthError, FileNotFoundError) as e:
        print("data error: %s" % e, file=sys.stderr)
        return 2
    except DivergenceError as e:
        print("divergence: %s" % e, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
