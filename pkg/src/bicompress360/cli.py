"""Command-line entry points: train, eval, predict, synth."""

import argparse
import json
from pathlib import Path

import importlib

from . import eval_metrics, pano_data
from .train import RunConfig

# the package re-exports the train() function under the submodule's name,
# so resolve the module itself explicitly
train_mod = importlib.import_module(".train", __package__)


def _cmd_train(args):
    config = RunConfig.from_json(args.config, fold_id=args.fold, seed=args.seed,
                                 deterministic=True if args.deterministic else None)
    _, history, ckpt = train_mod.train(config)
    print(f"checkpoint written to {ckpt}")
    hist_path = Path(config.output_dir) / "history.json"
    hist_path.write_text(json.dumps(history, indent=2))
    print(f"history written to {hist_path}")


def _cmd_eval(args):
    state = train_mod.load_checkpoint(args.ckpt)
    model, cfg = train_mod.restore_model(state)
    cfg.fold_id = args.fold
    _, test = train_mod.resolve_dataset(cfg)
    if not test:
        raise SystemExit("no test samples: configure data_root or BICOMPRESS_DATA_ROOT")
    miou, macc, cm = train_mod.evaluate_samples(model, test, cfg)
    out_dir = args.out or Path(cfg.output_dir) / f"eval_fold{args.fold}"
    summary = eval_metrics.write_report(cm, out_dir, fold=args.fold)
    print(f"fold {args.fold}: mIoU {summary['miou']:.4f} mAcc {summary['macc']:.4f}")
    print(f"report written to {out_dir}")


def _cmd_predict(args):
    train_mod.predict(args.ckpt, args.image, args.out)
    print(f"predictions written to {args.out}")


def _cmd_synth(args):
    samples = pano_data.synth_panorama(args.n, (args.height, 2 * args.height),
                                       args.classes, args.seed)
    pano_data.write_dataset(samples, args.out)
    print(f"{len(samples)} synthetic panoramas written to {args.out}")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="bicompress360",
        description="Indoor 360 semantic segmentation with bi-directional "
                    "feature compression and self-distillation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training loop from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--fold", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a fold")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--fold", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="segment a single ERP image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("synth", help="generate a synthetic fixture dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--classes", type=int, default=13)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=_cmd_synth)

    args = parser.parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
