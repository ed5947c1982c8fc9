"""Command line entry point: ``cbdemand <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import pandas as pd

from .cb_width import NumericError
from .config import ConfigError, DataError, RunConfig
from .distributions import ParameterDomainError
from .features import FeatureError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

DATA_ENV = "M5_DATA_DIR"

_logger = logging.getLogger("cbdemand")


def _quantiles(text: str):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad quantile list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cbdemand", description="Probabilistic demand forecasting with Cyclic Boosting.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, mode=True):
        sp.add_argument("--config", type=Path, help="YAML run configuration")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--data-dir", type=Path, help=f"M5 CSV directory (default: ${DATA_ENV})")
        if mode:
            sp.add_argument("--mode", choices=["a", "b", "c"])

    common(sub.add_parser("ingest", help="read the CSVs and write the long sample table"), mode=False)
    common(sub.add_parser("train", help="fit the mean and width models"))
    sp = sub.add_parser("predict", help="forecast distributions with a trained model")
    common(sp, mode=False)
    sp.add_argument("--model", type=Path, required=True)
    sp.add_argument("--explain", action="store_true", help="also write per-forecast factor breakdowns")
    sp.add_argument("--quantiles", type=_quantiles)
    sp.add_argument("--start")
    sp.add_argument("--end")
    sp = sub.add_parser("evaluate", help="calibration report for a forecast file")
    common(sp, mode=False)
    sp.add_argument("--forecasts", type=Path, required=True)
    sp = sub.add_parser("experiment", help="ingest, train, forecast the test period and evaluate")
    common(sp)
    sp.add_argument("--quantiles", type=_quantiles)
    return p


def _config(args) -> RunConfig:
    cfg = RunConfig.from_yaml(args.config) if args.config else RunConfig()
    changes = {
        "out": str(args.out) if args.out else None,
        "seed": args.seed,
        "mode": getattr(args, "mode", None),
        "quantiles": getattr(args, "quantiles", None),
    }
    data_dir = args.data_dir or (None if cfg.data_dir else os.environ.get(DATA_ENV))
    if data_dir:
        changes["data_dir"] = str(data_dir)
    return cfg.replace(**changes)


def _cmd_ingest(args, cfg):
    from .m5 import ingest

    table = ingest(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "samples.csv", "w", newline="") as fh:
        fh.write("# cbdemand samples v1\n")
        table.assign(date=table["date"].dt.strftime("%Y-%m-%d")).to_csv(
            fh, index=False, lineterminator="\n", float_format="%.12g")
    print(f"{len(table)} rows, {table.groupby(['item_id', 'store_id']).ngroups} series")


def _cmd_train(args, cfg):
    from .experiment import train, write_manifest
    from .m5 import ingest

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model = train(ingest(cfg), cfg)
    model.save(out / "model.json")
    write_manifest(out, cfg, ["ingest", "train"])
    print(f"model written to {out / 'model.json'}")


def _cmd_predict(args, cfg):
    from .experiment import ForecastModel, predict, write_forecasts
    from .m5 import ingest

    model = ForecastModel.load(args.model)
    # data selection follows the command line config, the model keeps its own
    # training settings
    model_cfg = model.config.replace(quantiles=list(cfg.quantiles) if args.quantiles else None)
    model.config = model_cfg
    data_cfg = model_cfg.replace(data_dir=cfg.data_dir, start_date=cfg.start_date, end_date=cfg.end_date,
                                 split_date=cfg.split_date, item_pattern=cfg.item_pattern, stores=cfg.stores)
    table = ingest(data_cfg)
    start = args.start or cfg.predict_start or cfg.split_date
    end = args.end or cfg.predict_end or cfg.end_date
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    frame, payload = predict(model, table, start, end, explain=args.explain)
    write_forecasts(out / "forecasts.csv", frame)
    if payload is not None:
        with open(out / "explanations.jsonl", "w") as fh:
            for row in payload:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"{len(frame)} forecasts written to {out / 'forecasts.csv'}")


def _cmd_evaluate(args, cfg):
    from .experiment import evaluate, read_forecasts

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    report = evaluate(read_forecasts(args.forecasts), cfg, out)
    _summary(report)


def _cmd_experiment(args, cfg):
    from .experiment import run_experiment

    _summary(run_experiment(cfg))


def _summary(report):
    for name, m in report["models"].items():
        print(f"{name:8s} EMD accuracy {m['emd_accuracy']:.4f}  MAD {m['mad']:.4f}  MSE {m['mse']:.4f}")


_COMMANDS = {
    "ingest": _cmd_ingest,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "experiment": _cmd_experiment,
}


def exit_code_for(exc: BaseException) -> int:
    cause = getattr(exc, "cause", None)
    if cause is not None:
        return exit_code_for(cause)
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (NumericError, FloatingPointError, ParameterDomainError)):
        return EXIT_NUMERIC
    if isinstance(exc, (DataError, FeatureError, pd.errors.ParserError)):
        return EXIT_DATA
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        _COMMANDS[args.command](args, cfg)
    except Exception as exc:  # noqa: BLE001 - mapped to documented exit codes
        code = exit_code_for(exc)
        if code == 1:
            raise
        print(f"cbdemand: error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
