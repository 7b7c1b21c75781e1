"""Command-line entry point: gen-synth | train | eval | score | ablate.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

import argparse
import csv
import os
import sys

from . import config as cfgmod
from .checkpoint import load_checkpoint, restore, save_checkpoint, snapshot
from .errors import ConfigError, DataError, NumericError
from .metrics import (
    evaluate,
    format_ablation_table,
    format_report,
    report_kv_lines,
    run_ablation,
    score_record,
)
from .model import VARIANT_ORDER, config_from_canonical, init_model, init_reference
from .rlrf import load_dataset, read_feature_file, save_dataset
from .scoring import write_pgm
from .synthetic import generate_synthetic_dataset
from .training import fit


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(sub):
    sub.add_argument("--config", help="INI config file", default=None)
    sub.add_argument("--seed", type=int, default=0, help="master seed (u64)")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--set", action="append", default=[], metavar="SEC.KEY=VAL",
                     help="override one config entry")


def build_parser():
    parser = _Parser(prog="refrec",
                     description="anomaly detection by feature reconstruction "
                                 "from a learnable reference bank")
    subs = parser.add_subparsers(dest="command", required=True)

    g = subs.add_parser("gen-synth", help="generate a synthetic dataset")
    _add_common(g)
    g.add_argument("--classes", type=int, default=None)
    g.add_argument("--train-per-class", type=int, default=None)
    g.add_argument("--test-per-class", type=int, default=None)
    g.set_defaults(func=cmd_gen_synth)

    t = subs.add_parser("train", help="train on a dataset's train split")
    _add_common(t)
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--resume", default=None, help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    e = subs.add_parser("eval", help="evaluate a checkpoint on the test split")
    _add_common(e)
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--threads", type=int, default=1)
    e.add_argument("--dump-maps", action="store_true",
                   help="write per-record score maps as PGM")
    e.set_defaults(func=cmd_eval)

    s = subs.add_parser("score", help="score one record")
    _add_common(s)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--file", default=None, help="an .rlrf feature file")
    s.add_argument("--data", default=None, help="dataset directory")
    s.add_argument("--record", default=None, help="image id inside --data")
    s.set_defaults(func=cmd_score)

    a = subs.add_parser("ablate", help="train and compare block variants")
    _add_common(a)
    a.add_argument("--data", required=True)
    a.add_argument("--epochs", type=int, default=None)
    a.add_argument("--lr", type=float, default=None)
    a.add_argument("--threads", type=int, default=1)
    a.add_argument("--variants", default=",".join(VARIANT_ORDER),
                   help="comma-separated variant names")
    a.set_defaults(func=cmd_ablate)
    return parser


def _resolve_config(args, base, data_dir=None):
    cfg = base
    path = args.config
    if path is None and data_dir is not None:
        candidate = os.path.join(data_dir, "config.synth.ini")
        if os.path.exists(candidate):
            path = candidate
    if path is not None:
        cfg = cfgmod.load_config(path, base=cfg)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set needs SEC.KEY=VAL, got {item!r}")
        key, val = item.split("=", 1)
        cfgmod.apply_override(cfg, key.strip(), val.strip())
    return cfg


def _echo_config(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.resolved.ini"), "w",
              encoding="utf-8") as f:
        f.write(cfgmod.serialize_config(cfg))


def _train_flag_overrides(args, cfg):
    if getattr(args, "epochs", None) is not None:
        cfg["training"]["epochs"] = args.epochs
    if getattr(args, "lr", None) is not None:
        cfg["training"]["learning_rate"] = args.lr
    if getattr(args, "batch_size", None) is not None:
        cfg["training"]["batch_size"] = args.batch_size


def cmd_gen_synth(args):
    cfg = _resolve_config(args, cfgmod.synthetic_profile())
    s = cfg["synthetic"]
    if args.classes is not None:
        s["classes"] = args.classes
    if args.train_per_class is not None:
        s["train_per_class"] = args.train_per_class
    if args.test_per_class is not None:
        s["test_per_class"] = args.test_per_class
    train, test = generate_synthetic_dataset(
        n_classes=s["classes"], n_train=s["train_per_class"],
        n_test=s["test_per_class"], scale_dims=cfgmod.synthetic_scale_dims(cfg),
        anomaly_spec=cfgmod.build_anomaly_spec(cfg), seed=args.seed,
        image_hw=(s["image_h"], s["image_w"]))
    save_dataset(train, test, args.out)
    with open(os.path.join(args.out, "config.synth.ini"), "w",
              encoding="utf-8") as f:
        f.write(cfgmod.serialize_config(cfg))
    _echo_config(cfg, args.out)
    anom = sum(1 for r in test if r.is_anomalous)
    print(f"wrote {len(train)} train and {len(test)} test records "
          f"({anom} anomalous) across {s['classes']} classes to {args.out}")
    return 0


def cmd_train(args):
    cfg = _resolve_config(args, cfgmod.default_config(), data_dir=args.data)
    _train_flag_overrides(args, cfg)
    train_records, _ = load_dataset(args.data)
    if not train_records:
        raise DataError(f"no train split in {args.data}")
    dims = train_records[0].scale_dims()
    model_config = cfgmod.build_model_config(cfg, dims, args.seed)
    train_config = cfgmod.build_train_config(cfg, args.seed)

    model = init_model(model_config)
    bank = init_reference(model_config)
    start_epoch = 0
    adam = None
    if args.resume:
        state = load_checkpoint(args.resume)
        adam = restore(state, model, bank)
        start_epoch = state.epoch
        print(f"resumed from {args.resume} at epoch {start_epoch}")

    os.makedirs(args.out, exist_ok=True)
    _echo_config(cfg, args.out)
    loss_rows = []
    interval = train_config.checkpoint_interval

    def on_epoch(epoch, mean_loss, adam_state):
        loss_rows.append((epoch, mean_loss))
        if interval and (epoch + 1) % interval == 0 and epoch + 1 < train_config.epochs:
            save_checkpoint(snapshot(model, bank, epoch + 1, adam_state, args.seed),
                            os.path.join(args.out, f"checkpoint_epoch{epoch + 1:04d}.rlrc"))

    result = fit(train_records, model, bank, train_config,
                 start_epoch=start_epoch, adam=adam, epoch_callback=on_epoch)

    ck_path = os.path.join(args.out, "checkpoint.rlrc")
    save_checkpoint(snapshot(model, bank, train_config.epochs, result.adam,
                             args.seed), ck_path)
    with open(os.path.join(args.out, "loss.csv"), "w", newline="",
              encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "loss"])
        writer.writerows(loss_rows)
    final = (f"final loss {result.loss_history[-1]:.6f}"
             if result.loss_history else "nothing left to train")
    print(f"trained {result.epochs_run} epochs (sigma={result.sigma:.6g}); "
          f"{final}; checkpoint at {ck_path}")
    return 0


def _load_trained(checkpoint_path):
    state = load_checkpoint(checkpoint_path)
    model_config = config_from_canonical(state.config_text)
    model = init_model(model_config)
    bank = init_reference(model_config)
    restore(state, model, bank)
    return model, bank


def cmd_eval(args):
    cfg = _resolve_config(args, cfgmod.default_config(), data_dir=args.data)
    model, bank = _load_trained(args.checkpoint)
    _, test_records = load_dataset(args.data)
    if not test_records:
        raise DataError(f"no test split in {args.data}")
    report = evaluate(test_records, model, bank,
                      smooth_window=cfg["scoring"]["smooth_window"],
                      threads=args.threads)
    os.makedirs(args.out, exist_ok=True)
    _echo_config(cfg, args.out)
    text = format_report(report)
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as f:
        f.write(text)
    with open(os.path.join(args.out, "report.kv"), "w", encoding="utf-8") as f:
        f.write("\n".join(report_kv_lines(report)) + "\n")
    if args.dump_maps:
        maps_dir = os.path.join(args.out, "maps")
        os.makedirs(maps_dir, exist_ok=True)
        for rec in test_records:
            smap, _ = score_record(rec, model, bank,
                                   cfg["scoring"]["smooth_window"])
            base = os.path.join(maps_dir, rec.image_id)
            write_pgm(smap, base + ".pgm", base + ".bounds.txt")
    print(text, end="")
    return 0


def cmd_score(args):
    cfg = _resolve_config(args, cfgmod.default_config(), data_dir=args.data)
    model, bank = _load_trained(args.checkpoint)
    if args.file:
        record = read_feature_file(args.file)
    elif args.data and args.record:
        train, test = load_dataset(args.data)
        matches = [r for r in train + test if r.image_id == args.record]
        if not matches:
            raise DataError(f"record {args.record!r} not found in {args.data}")
        record = matches[0]
    else:
        raise ConfigError("score needs --file or both --data and --record")
    smap, img_score = score_record(record, model, bank,
                                   cfg["scoring"]["smooth_window"])
    os.makedirs(args.out, exist_ok=True)
    base = os.path.join(args.out, record.image_id)
    write_pgm(smap, base + ".pgm", base + ".bounds.txt")
    print(f"{record.image_id}: image score {img_score:.6f} "
          f"(map written to {base}.pgm)")
    return 0


def cmd_ablate(args):
    cfg = _resolve_config(args, cfgmod.default_config(), data_dir=args.data)
    _train_flag_overrides(args, cfg)
    variants = tuple(v.strip() for v in args.variants.split(",") if v.strip())
    unknown = [v for v in variants if v not in VARIANT_ORDER]
    if unknown:
        raise ConfigError(f"unknown variants {unknown}; choose from {VARIANT_ORDER}")
    train_records, test_records = load_dataset(args.data)
    if not train_records or not test_records:
        raise DataError(f"{args.data} must provide both splits")
    dims = train_records[0].scale_dims()
    model_config = cfgmod.build_model_config(cfg, dims, args.seed)
    train_config = cfgmod.build_train_config(cfg, args.seed)

    def progress(variant, report):
        print(f"{variant:<16} image {report.image_auroc:.4f} "
              f"pixel {report.pixel_auroc:.4f}")

    results = run_ablation(train_records, test_records, model_config,
                           train_config, variants=variants,
                           smooth_window=cfg["scoring"]["smooth_window"],
                           threads=args.threads, progress=progress)
    os.makedirs(args.out, exist_ok=True)
    _echo_config(cfg, args.out)
    table = format_ablation_table(results)
    with open(os.path.join(args.out, "ablation.txt"), "w", encoding="utf-8") as f:
        f.write(table)
    with open(os.path.join(args.out, "ablation.kv"), "w", encoding="utf-8") as f:
        for variant, report in results:
            f.write(f"{variant}.image_auroc={report.image_auroc!r}\n")
            f.write(f"{variant}.pixel_auroc={report.pixel_auroc!r}\n")
    print(table, end="")
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
