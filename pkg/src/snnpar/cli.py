"""Command-line entry point: ``snnpar <command> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or integrity
error, 3 failed gradient check.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import distill as kd
from .config import ConfigError, load_config, parse_lines
from .data import Dataset, IntegrityError, ManifestError, SyntheticSpec, generate_synthetic, manifest_path
from .energy import EnergyModel, count_sops, energy_report, write_energy_report
from .gradcheck import check_gradients
from .tensorio import FormatError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("snnpar")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _splits(root: Path) -> list[str]:
    return [s for s in ("train", "val", "test") if manifest_path(root, s).exists()]


# -- commands ------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    fields = {}
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read {args.config}: {exc}") from exc
        for key, raw in parse_lines(text, args.config).items():
            name = key.removeprefix("data.")
            if name not in SyntheticSpec.__dataclass_fields__:
                raise ConfigError(f"unknown data key {key!r}")
            fields[name] = (tuple(float(v) for v in raw.split(",")) if name == "positive_ratios"
                            else float(raw) if name == "noise" else int(raw))
    if args.seed is not None:
        fields["seed"] = args.seed
    try:
        spec = SyntheticSpec(**fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out)
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        raise IntegrityError(f"{out} exists and is not an empty directory")
    # build next to the target and rename, so a failure leaves no partial dataset behind
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    except OSError as exc:
        raise IntegrityError(f"cannot create {out}: {exc}") from exc
    try:
        manifests = generate_synthetic(spec, tmp)
        if out.exists():
            out.rmdir()
        tmp.rename(out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    for split, man in manifests.items():
        print(f"{split}: {len(man.records)} samples")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_train_teacher(args) -> int:
    from .teacher import TeacherConfig, merge_artifacts, teacher_mA, teacher_outputs, train_mock_teacher

    root = Path(_required(args, "dataset"))
    train_set = Dataset.load(root, "train")
    tcfg = TeacherConfig(seed=args.seed or 0)
    if args.epochs:
        tcfg.epochs = args.epochs
    net = train_mock_teacher(train_set, tcfg, on_epoch=lambda e, l: print(f"teacher epoch {e}: bce {l:.4f}"))
    parts = []
    for split in _splits(root):
        ds = train_set if split == "train" else Dataset.load(root, split)
        art = teacher_outputs(net, ds)
        print(f"teacher mA on {split}: {teacher_mA(art, ds):.5f}")
        parts.append(art)
    art = merge_artifacts(parts)
    out = Path(_required(args, "out"))
    out.parent.mkdir(parents=True, exist_ok=True)
    kd.write_teacher(out, art)
    print(f"wrote {len(art)} teacher records to {out}")
    return EXIT_OK


def _overrides(args) -> dict[str, str]:
    ov = dict(kv.split("=", 1) for kv in (args.set or []))
    if args.seed is not None:
        ov["train.seed"] = ov["model.seed"] = str(args.seed)
    if getattr(args, "teacher", None):
        ov["distill.teacher"] = args.teacher
    return ov


def cmd_train(args) -> int:
    from .train import Checkpoint, Trainer, prepare_run_dir

    for kv in args.set or []:
        if "=" not in kv:
            raise ConfigError(f"--set expects key=value, got {kv!r}")
    cfg = load_config(args.config, _overrides(args))
    root = Path(_required(args, "dataset"))
    train_set = Dataset.load(root, "train")
    split = cfg.train.eval_split
    if split == "auto":
        split = "val" if manifest_path(root, "val").exists() else "test"
    eval_set = Dataset.load(root, split) if split != "none" and manifest_path(root, split).exists() else None
    teacher = kd.read_teacher(cfg.distill.teacher) if cfg.distill.teacher else None
    out = prepare_run_dir(_required(args, "out"), cfg)
    trainer = Trainer(cfg, train_set, eval_set, teacher, out)
    ck_path = out / "checkpoint.snpk"
    if args.resume and ck_path.exists():
        trainer.restore(Checkpoint.load(ck_path))
        print(f"resumed from epoch {trainer.epoch}")
    elif (out / "metrics.ndjson").exists():
        (out / "metrics.ndjson").unlink()

    def show(e):
        parts = " ".join(f"{k}={e[k]:.4f}" for k in ("loss", "ce", "resp_kd", "feat_kd") if k in e)
        ev = e.get("eval")
        tail = f" | {split} mA={ev['mA']:.4f} F1={ev['F1']:.4f}" if ev else ""
        print(f"epoch {e['epoch']:3d} lr={e['lr']:.2e} {parts}{tail} ({e['seconds']:.1f}s)", flush=True)

    trainer.fit(on_epoch=show)
    print(f"wrote {ck_path}")
    return EXIT_OK


def _load_for_eval(args):
    from .train import Checkpoint

    ck = Checkpoint.load(_required(args, "checkpoint"))
    ds = Dataset.load(_required(args, "dataset"), args.split)
    if list(ds.attributes) != ck.attributes:
        raise kd.ValidationError(f"attribute vocabulary mismatch: checkpoint {ck.attributes}, "
                                 f"dataset {list(ds.attributes)}")
    return ck.build_model(), ds


def cmd_eval(args) -> int:
    from .train import evaluate

    model, ds = _load_for_eval(args)
    rep = evaluate(model, ds, args.threshold, args.mode)
    print(rep.to_text(), end="")
    if rep.flags:
        print("flags: " + ", ".join(rep.flags))
    stem = Path(args.out) if args.out else Path(args.checkpoint).with_name(f"eval_{args.split}")
    txt, js = rep.write(stem)
    print(f"wrote {txt} and {js}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .gradcheck import TINY

    cfg = TINY
    if args.config:
        cfg = load_config(args.config).model
    rep = check_gradients(cfg, n_samples=args.samples, seed=args.seed or 0)
    print(rep.to_text())
    return EXIT_OK if rep.passed else EXIT_CHECK


def cmd_energy_report(args) -> int:
    model, ds = _load_for_eval(args)
    em = EnergyModel(args.e_mac, args.e_ac)
    n = min(len(ds), args.limit) if args.limit else len(ds)
    stats = None
    for start in range(0, n, 50):
        s = count_sops(model, ds.images[start:min(start + 50, n)])
        if stats is None:
            stats = s
        else:
            for acc, new in zip(stats.layers, s.layers):
                acc.spikes += new.spikes
                acc.elements += new.elements
                acc.sops += new.sops
                acc.macs += new.macs
                acc.encoder_macs += new.encoder_macs
    if stats is None:
        raise IntegrityError("energy report needs at least one sample")
    rep = energy_report(stats, em)
    rep["samples"] = n
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name("energy_report.json")
    write_energy_report(out, rep)
    print(json.dumps({k: rep[k] for k in ("snn_pj", "ann_pj", "ratio")} | {"totals": rep["totals"]}, indent=2))
    print(f"wrote {out}")
    return EXIT_OK


def _required(args, name: str):
    value = getattr(args, name, None)
    if not value:
        raise UsageError(f"--{name} is required for this command")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="snnpar", description="Spiking transformer attribute recognition toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, *flags):
        if "config" in flags:
            sp.add_argument("--config", help="key=value configuration file")
        if "seed" in flags:
            sp.add_argument("--seed", type=int)
        if "out" in flags:
            sp.add_argument("--out")
        if "dataset" in flags:
            sp.add_argument("--dataset", help="dataset directory")
        if "checkpoint" in flags:
            sp.add_argument("--checkpoint")
        if "teacher" in flags:
            sp.add_argument("--teacher", help="teacher artifact file")

    sp = sub.add_parser("gen-data", help="write a synthetic dataset")
    common(sp, "config", "seed", "out")
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train-teacher", help="train the mock teacher and write its artifact")
    common(sp, "seed", "out", "dataset")
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_train_teacher)

    sp = sub.add_parser("train", help="train the spiking student")
    common(sp, "config", "seed", "out", "dataset", "teacher")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config entry")
    sp.add_argument("--resume", action="store_true", help="continue from <out>/checkpoint.snpk")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score a checkpoint on a split")
    common(sp, "out", "dataset", "checkpoint")
    sp.add_argument("--split", default="test")
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.add_argument("--mode", choices=("instance", "count"), default="instance")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("grad-check", help="finite-difference check of the training gradients")
    common(sp, "config", "seed")
    sp.add_argument("--samples", type=int, default=256)
    sp.set_defaults(func=cmd_grad_check)

    sp = sub.add_parser("energy-report", help="spike statistics and energy estimate")
    common(sp, "out", "dataset", "checkpoint")
    sp.add_argument("--split", default="test")
    sp.add_argument("--limit", type=int, default=0, help="use only the first N samples")
    sp.add_argument("--e-mac", type=float, default=4.6)
    sp.add_argument("--e-ac", type=float, default=0.9)
    sp.set_defaults(func=cmd_energy_report)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"snnpar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"snnpar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ManifestError, IntegrityError, FormatError, kd.ValidationError, OSError) as exc:
        print(f"snnpar: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
