"""``wtcformer`` command-line interface.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
Errors are printed to stderr as a single JSON line.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import yaml

from . import __version__
from .dataset import SyntheticSpec, dataset_stats, load_corpus, synthesize, write_corpus
from .errors import ConfigError, NumericError, WTError
from .evaluation import (
    METRIC_NAMES, ablation_report, cross_validate, evaluate, format_table, histogram_svg,
)
from .model import ModelConfig, TrainConfig, build_model, load_weights, save_weights, seeded_streams, train
from .windowing import SplitSpec, WindowConfig, build_corpus, split

FORMAT_VERSION = 1
SECTIONS = {"window": WindowConfig, "model": ModelConfig, "train": TrainConfig, "split": SplitSpec}

log = logging.getLogger("wtcformer")


# config -------------------------------------------------------------------

@dataclasses.dataclass
class RunConfig:
    window: WindowConfig = dataclasses.field(default_factory=WindowConfig)
    model: ModelConfig = dataclasses.field(default_factory=ModelConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    split: SplitSpec = dataclasses.field(default_factory=SplitSpec)

    def validate(self):
        self.window.validate()
        self.model.validate()
        self.train.validate()
        self.split.validate()
        if self.window.w != self.model.window_length:
            raise ConfigError(
                f"window.w={self.window.w} differs from model.window_length={self.model.window_length}"
            )
        return self

    def to_dict(self):
        return {name: getattr(self, name).to_dict() for name in SECTIONS}


def _coerce(section, field, value):
    default = field.default if field.default is not dataclasses.MISSING else field.default_factory()
    name = f"{section}.{field.name}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true/false, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number, got {value!r}")
        value = float(value)
    elif isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name} must be a list, got {value!r}")
        value = tuple(value)
    elif isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{name} must be a string, got {value!r}")
    return value


def _section(cls, name, data):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    by_name = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(by_name))
    if unknown:
        raise ConfigError(f"unknown {name} keys: {', '.join(unknown)}")
    return cls(**{k: _coerce(name, by_name[k], v) for k, v in data.items()})


def resolve_config(path=None, overrides=None, base=None, validate=True):
    """Defaults <- ``base`` (echoed config) <- config file <- flag overrides."""
    merged = {name: {} for name in SECTIONS}
    layers = [base or {}]
    if path is not None:
        try:
            doc = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must be a mapping of sections")
        layers.append(doc)
    layers.append(overrides or {})
    for layer in layers:
        unknown = sorted(set(layer) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
        for name, values in layer.items():
            if values is not None and not isinstance(values, dict):
                raise ConfigError(f"config section {name!r} must be a mapping")
            merged[name].update(values or {})
    cfg = RunConfig(**{name: _section(cls, name, merged[name]) for name, cls in SECTIONS.items()})
    return cfg.validate() if validate else cfg


def _flag_overrides(args):
    out = {}
    for name, cls in SECTIONS.items():
        for f in dataclasses.fields(cls):
            raw = getattr(args, f"{name}__{f.name}", None)
            if raw is None:
                continue
            try:
                value = yaml.safe_load(raw)
            except yaml.YAMLError:
                raise ConfigError(f"--{name}.{f.name}: cannot parse {raw!r}") from None
            out.setdefault(name, {})[f.name] = value
    return out


def _add_config_flags(parser):
    group = parser.add_argument_group("config overrides (flags win over --config)")
    for name, cls in SECTIONS.items():
        for f in dataclasses.fields(cls):
            group.add_argument(f"--{name}.{f.name}", dest=f"{name}__{f.name}", metavar="VALUE")


# provenance ---------------------------------------------------------------

def hash_paths(paths):
    h = hashlib.sha256()
    for p in sorted(Path(x) for x in paths):
        h.update(p.name.encode())
        h.update(b"\0")
        h.update(p.read_bytes())
    return h.hexdigest()


def file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def data_hash(directory):
    return hash_paths(Path(directory).glob("*.csv"))


def provenance(config, seed, inputs):
    return {"format_version": FORMAT_VERSION, "package_version": __version__,
            "config": config, "seed": seed, "inputs": inputs}


def emit(doc, out=None, text=None, pretty=False):
    payload = text if (pretty and text is not None) else json.dumps(doc, indent=2, sort_keys=True)
    if out is None:
        sys.stdout.write(payload + "\n")
    else:
        Path(out).write_text(payload + "\n")


def _metrics_text(title, report):
    m = report["metrics"]
    c = report["confusion"]
    rows = [{"metric": k, "value": m[k]} for k in METRIC_NAMES]
    lines = [title, format_table(rows, ["metric", "value"], percent=("value",)), "",
             f"confusion: TP={c['tp']} FP={c['fp']} FN={c['fn']} TN={c['tn']}"]
    groups = report["position_analysis"]["groups"]
    lines += ["", format_table([{"positions": f"{g['range'][0]}-{g['range'][1]}",
                                 "count": g["count"], "percent": f"{g['percent']:.2f}"}
                                for g in groups], ["positions", "count", "percent"])]
    types = report["type_analysis"]
    if types["available"]:
        lines += ["", "missed windows by anomaly type: "
                  + ", ".join(f"{k}={v}" for k, v in types["counts"].items())]
    return "\n".join(lines)


# commands -----------------------------------------------------------------

def cmd_synth(args):
    data = {}
    if args.spec:
        try:
            data = yaml.safe_load(Path(args.spec).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read spec {args.spec}: {exc.strerror}") from None
    if args.seed is not None:
        data["seed"] = args.seed
    spec = SyntheticSpec.from_dict(data)
    files, events = synthesize(spec)
    paths = write_corpus(files, args.out)
    stats = dataset_stats(files)
    doc = {"provenance": provenance({"synthetic": spec.to_dict()}, spec.seed,
                                    {"data_sha256": hash_paths(paths)}),
           "stats": stats.to_dict(),
           "injections": [dataclasses.asdict(e) for e in events]}
    (Path(args.out) / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    emit({"files": len(paths), "stats": stats.to_dict()})


def cmd_stats(args):
    stats = dataset_stats(load_corpus(args.data))
    doc = {"provenance": provenance(None, None, {"data_sha256": data_hash(args.data)}),
           "stats": stats.to_dict()}
    emit(doc, args.out)


def _windows_for(args, cfg):
    return build_corpus(load_corpus(args.data), cfg.window)


def cmd_train(args):
    cfg = resolve_config(args.config, _flag_overrides(args))
    samples = _windows_for(args, cfg)
    train_part, test_part = split(samples, cfg.split)
    model = build_model(cfg.model, seeded_streams(cfg.train.seed)["init"])
    model, history = train(model, train_part, test_part, cfg.train)
    echo = cfg.to_dict()
    save_weights(model, args.out, extra={"run": echo, "data_sha256": data_hash(args.data)})
    doc = {"provenance": provenance(echo, cfg.train.seed, {"data_sha256": data_hash(args.data)}),
           "n_train": len(train_part), "n_test": len(test_part),
           "num_parameters": model.num_parameters(), "history": history.to_dict()}
    emit(doc, args.history or f"{args.out}.history.json")


def cmd_eval(args):
    model, extra = load_weights(args.weights)
    # weights carry their own model config; the rest of the echoed run seeds eval's defaults
    base = {**(extra.get("run") or {}), "model": model.config.to_dict()}
    cfg = resolve_config(args.config, _flag_overrides(args), base=base, validate=False)
    if cfg.window.w != model.config.window_length:
        raise ConfigError(f"window length mismatch: data windows w={cfg.window.w}, "
                          f"weights expect window_length={model.config.window_length}")
    if cfg.model != model.config:
        raise ConfigError("model settings cannot be overridden at eval; they come from the weights")
    cfg.validate()
    samples = _windows_for(args, cfg)
    if args.subset == "test":
        _, samples = split(samples, cfg.split)
    report = evaluate(model, samples, cfg.train.threshold)
    doc = {"provenance": provenance(cfg.to_dict(), cfg.train.seed, {
               "data_sha256": data_hash(args.data), "weights_sha256": file_hash(args.weights)}),
           "subset": args.subset, "n_windows": len(samples), **report.to_dict()}
    if args.svg:
        Path(args.svg).write_text(histogram_svg(report.position.histogram))
    emit(doc, args.out, _metrics_text(f"evaluation ({args.subset}, {len(samples)} windows)", doc),
         args.pretty)


def cmd_cv(args):
    cfg = resolve_config(args.config, _flag_overrides(args))
    samples = _windows_for(args, cfg)
    result = cross_validate(samples, cfg.model, cfg.train, k=args.k, seed=cfg.split.seed)
    doc = {"provenance": provenance(cfg.to_dict(), cfg.train.seed,
                                    {"data_sha256": data_hash(args.data)}), **result}
    rows = [dict(r) for r in result["folds"] if not r["excluded"]]
    rows.append({"fold": "mean", **result["mean"]})
    text = format_table(rows, ["fold"] + list(METRIC_NAMES), percent=METRIC_NAMES)
    emit(doc, args.out, text, args.pretty)


def cmd_ablate(args):
    cfg = resolve_config(args.config, _flag_overrides(args))
    samples = _windows_for(args, cfg)
    table = ablation_report(samples, cfg.train, cfg.model, cfg.split)
    doc = {"provenance": provenance(cfg.to_dict(), cfg.train.seed,
                                    {"data_sha256": data_hash(args.data)}), **table}
    text = format_table(table["rows"], ["variant"] + list(METRIC_NAMES), percent=METRIC_NAMES)
    emit(doc, args.out, text, args.pretty)


def cmd_gradcheck(args):
    from .verify import MODEL_TOL, PRIMITIVE_TOL, run_all

    result = run_all(args.seed)
    summary = {
        "primitives_max": max(result["primitives"].values()),
        "layers_max": max(result["layers"].values()),
        "model_max": max(result["model"].values()),
        "tolerances": {"primitives": PRIMITIVE_TOL, "layers": PRIMITIVE_TOL, "model": MODEL_TOL},
        "passed": result["passed"],
    }
    emit({**result, "summary": summary})
    if not result["passed"]:
        raise NumericError(f"gradient check failed: {summary}")


# entry point --------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"usage: {message}")


def build_parser():
    parser = _Parser(prog="wtcformer", description="Web traffic window anomaly detector")
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[common], **kw)

    sub.add_parser = add_parser

    p = sub.add_parser("synth", help="generate a labelled synthetic corpus")
    p.add_argument("--spec", help="YAML synthetic spec (defaults if omitted)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("data")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train on the hold-out split, write weights + history")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="weight file")
    p.add_argument("--history", help="history document (default: <out>.history.json)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a weight file")
    p.add_argument("--data", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--config")
    p.add_argument("--subset", choices=("test", "all"), default="test")
    p.add_argument("--out")
    p.add_argument("--svg", help="also write the position histogram as SVG")
    p.add_argument("--pretty", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cv", help="k-fold cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out")
    p.add_argument("--pretty", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("ablate", help="CNN-only / Transformer-only / full comparison")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--pretty", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
        return 0
    except WTError as exc:
        code = exc.exit_code
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    except (FloatingPointError, OverflowError) as exc:
        code = 3
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    except OSError as exc:
        code = 2
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    sys.stderr.write(json.dumps(err) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
