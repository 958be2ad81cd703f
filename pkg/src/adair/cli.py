"""Command-line surface: train, restore, eval, analyze, gradcheck, params.

Configuration files are flat `key = value` text; model and training keys
may share one file and unknown keys are rejected.  Exit codes: 0 success,
1 usage error, 2 runtime failure.  ADAIR_SEED provides the seed when
--seed is not given.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import degrade as D
from .analyze import residual_spectrum_curve, write_curve_csv, write_curve_svg
from .errors import AdairError, InvalidConfig, UsageError
from .gradcheck import gradcheck_suite
from .network import ModelConfig, build_model, count_parameters, load_checkpoint, save_checkpoint
from .ppm import read_image, write_image
from .training import TrainConfig, psnr, ssim, train_loop, write_history_csv


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _resolve_seed(value) -> int:
    if value is not None:
        return int(value)
    return int(os.environ.get("ADAIR_SEED", "0"))


def _read_config_pair(path, overrides):
    """Split one flat config file into (ModelConfig, TrainConfig)."""
    model_keys = {f.name for f in fields(ModelConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    model_lines, train_lines = [], []
    lines = Path(path).read_text(encoding="utf-8").splitlines() if path else []
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        lines.append(item)
    for raw in lines:
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        key = stripped.partition("=")[0].strip()
        if key in model_keys:
            model_lines.append(stripped)
        elif key in train_keys:
            train_lines.append(stripped)
        else:
            raise InvalidConfig(f"unknown configuration key {key!r}")
    return (
        ModelConfig.from_text("\n".join(model_lines)),
        TrainConfig.from_text("\n".join(train_lines)),
    )


def _default_dataset(seed: int):
    return D.build_dataset(("noise", "haze", "rain"), per_kind=2, size=64, seed=seed)


##########################################################################
# subcommands


def _cmd_train(args) -> int:
    seed = _resolve_seed(args.seed)
    model_cfg, train_cfg = _read_config_pair(args.config, args.set)
    if args.seed is not None or "ADAIR_SEED" in os.environ:
        train_cfg.seed = seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = D.load_manifest_pairs(args.data) if args.data else _default_dataset(seed)
    model = build_model(model_cfg, seed=seed)
    model, metrics = train_loop(model, pairs, train_cfg, out_dir=out)
    save_checkpoint(model, out / "final.ckpt")
    write_history_csv(out / "history.csv", metrics)
    print(f"trained {train_cfg.steps} steps on {len(pairs)} pairs")
    print(f"loss {metrics.losses[0]:.5f} -> {metrics.losses[-1]:.5f}, "
          f"psnr {metrics.psnrs[0]:.2f} -> {metrics.psnrs[-1]:.2f} dB")
    print(f"checkpoint: {out / 'final.ckpt'}")
    return 0


def _iter_input_images(spec: str):
    path = Path(spec)
    if path.is_dir():
        found = sorted(path.glob("*.ppm"))
        if not found:
            raise AdairError(f"no .ppm files in {path}")
        return found
    return [path]


def _cmd_restore(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for src in _iter_input_images(args.input):
        img = read_image(src)
        restored = model(img[None])[0]
        write_image(out / src.name, restored)
        print(f"{src.name}: restored {img.shape[2]}x{img.shape[1]}")
    return 0


def _cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    seed = _resolve_seed(args.seed)
    pairs = D.load_manifest_pairs(args.data) if args.data else _default_dataset(seed)
    by_tag: dict[str, list] = {}
    for pair in pairs:
        restored = model(pair.degraded[None])[0]
        by_tag.setdefault(pair.tag, []).append((
            psnr(restored, pair.clean), ssim(restored, pair.clean),
            psnr(pair.degraded, pair.clean),
        ))
    print(f"{'tag':<10} {'n':>3} {'input_psnr':>11} {'psnr':>8} {'ssim':>7}")
    for tag in sorted(by_tag):
        rows = np.array(by_tag[tag])
        print(f"{tag:<10} {len(rows):>3} {rows[:, 2].mean():>11.2f} "
              f"{rows[:, 0].mean():>8.2f} {rows[:, 1].mean():>7.4f}")
    return 0


def _cmd_analyze(args) -> int:
    clean = read_image(args.clean)
    degraded = read_image(args.degraded)
    report = residual_spectrum_curve(clean, degraded, tag=args.tag, filled=args.filled)
    write_curve_csv(args.out, report)
    if args.plot:
        write_curve_svg(args.plot, [report])
    print(f"curve written to {args.out}")
    print(f"flatness_cv {report.flatness_cv:.4f}, monotonicity {report.monotonicity:+.4f}")
    return 0


def _cmd_gradcheck(args) -> int:
    seed = _resolve_seed(args.seed)
    results = gradcheck_suite(seed=seed)
    failed = False
    for name, err, tol in results:
        ok = err < tol
        failed |= not ok
        print(f"{name:<26} max_rel_err {err:.3e}  tol {tol:.0e}  {'PASS' if ok else 'FAIL'}")
    return 2 if failed else 0


def _cmd_params(args) -> int:
    model_cfg, _ = _read_config_pair(args.config, args.set)
    if args.no_aflb:
        from dataclasses import replace

        model_cfg = replace(model_cfg, aflb_placement=())
    model = build_model(model_cfg, seed=0)
    total, sections = count_parameters(model)
    print(f"total parameters: {total:,} ({total / 1e6:.2f}M)")
    for section in sorted(sections):
        print(f"  {section:<11} {sections[section]:>12,}")
    if model_cfg.aflb_placement:
        from dataclasses import replace

        base_total, _ = count_parameters(build_model(replace(model_cfg, aflb_placement=()), seed=0))
        overhead = total - base_total
        print(f"frequency-block overhead: {overhead:,} ({overhead / 1e6:.2f}M; "
              f"published reference 2.64M)")
    return 0


##########################################################################
# entry point


def _build_parser() -> _Parser:
    parser = _Parser(prog="adair",
                     description="All-in-one image restoration via frequency mining and modulation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--data", help="dataset manifest (clean_path<TAB>spec_json<TAB>seed)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("restore", help="restore PPM images with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="a .ppm file or a directory of them")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_restore)

    p = sub.add_parser("eval", help="report PSNR/SSIM per degradation tag")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset manifest; synthetic set when omitted")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("analyze", help="residual-spectrum square curve")
    p.add_argument("--clean", required=True)
    p.add_argument("--degraded", required=True)
    p.add_argument("--out", default="curve.csv")
    p.add_argument("--plot", help="optional SVG path")
    p.add_argument("--filled", action="store_true",
                   help="average over filled squares instead of perimeters")
    p.add_argument("--tag", default="")
    p.set_defaults(fn=_cmd_analyze)

    p = sub.add_parser("gradcheck", help="finite-difference checks for every block")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("params", help="parameter-count ledger for a config")
    p.add_argument("--config", required=True)
    p.add_argument("--no-aflb", action="store_true", help="drop the frequency blocks")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(fn=_cmd_params)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (AdairError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
