"""Command-line interface.

Subcommands: gen-data, train, eval, attack, grad-check, export-features.
Exit codes: 0 success, 1 usage error, 2 runtime error. All randomness is
controlled by --seed; identical flags reproduce identical outputs.
"""

from __future__ import annotations

import argparse
import sys

from . import checkpoint as ckpt_io
from .attacks import ATTACK_ORDER, attack_name, run_attack, verify_attack_constraints
from .config import (
    attack_from_options,
    backbone_from_section,
    dataset_from_section,
    oudefend_from_section,
    read_config_file,
    train_from_section,
)
from .data import DatasetSpec, generate_dataset, load_dataset, save_dataset
from .errors import ConfigError, OUDefendError
from .features import export_feature_maps
from .gradcheck import run_random_graph_checks
from .models import init_model, param_count
from .training import ModelClosure, TrainConfig, evaluate, fit

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(USAGE_ERROR)


def _add_attack_flags(p: argparse.ArgumentParser, required: bool = False):
    p.add_argument("--attack", required=required,
                   choices=("none",) + ATTACK_ORDER, default=None if required else "none")
    p.add_argument("--eps", help="radius; fractions like 4/255 allowed")
    p.add_argument("--alpha", help="step size; fractions allowed")
    p.add_argument("--steps", type=int)
    p.add_argument("--eps-m", dest="eps_m", help="multiplicative bound (multav)")
    p.add_argument("--alpha-m", dest="alpha_m", help="multiplicative step (multav)")
    p.add_argument("--rect-h", dest="rect_h", type=int)
    p.add_argument("--rect-w", dest="rect_w", type=int)
    p.add_argument("--search-stride", dest="search_stride", type=int)
    p.add_argument("--width", type=int, help="framing band width")
    p.add_argument("--pixels-per-frame", dest="pixels_per_frame", type=int)


def _attack_from_args(args, file_section=None):
    name = args.attack
    options = {}
    for key in ("eps", "alpha", "steps", "eps_m", "alpha_m", "rect_h", "rect_w",
                "search_stride", "width", "pixels_per_frame"):
        val = getattr(args, key, None)
        if val is None and file_section:
            val = file_section.get(key)
        options[key] = val
    if name in (None, "none"):
        name = file_section.get("name") if file_section else None
        if name in (None, "none"):
            return None
    return attack_from_options(name, options)


def _sections(args) -> dict:
    return read_config_file(args.config) if getattr(args, "config", None) else {}


def _merge(args, section: dict, *fields):
    """Flag value if given, else config-file value, else None."""
    out = {}
    for f in fields:
        v = getattr(args, f, None)
        if v is None and f in section:
            v = section[f]
        if v is not None:
            out[f] = v
    return out


def cmd_gen_data(args) -> int:
    sections = _sections(args)
    spec = dataset_from_section(sections.get("dataset", {}))
    over = _merge(args, {}, "num_train", "num_test", "seed")
    if over:
        spec = DatasetSpec(**{**spec.__dict__, **{k: int(v) for k, v in over.items()}})
    batches = generate_dataset(spec)
    save_dataset(args.out, batches)
    print(f"wrote {args.out}: train={spec.num_train} test={spec.num_test} seed={spec.seed}")
    return 0


def _load_model(path):
    ckpt = ckpt_io.load_checkpoint(path)
    return ckpt_io.model_from_checkpoint(ckpt), ckpt


def cmd_train(args) -> int:
    sections = _sections(args)
    train, test = load_dataset(args.data)

    bsec = dict(sections.get("backbone", {}))
    if args.insert_after is not None:
        bsec["insert_after"] = args.insert_after
    bcfg = backbone_from_section(bsec)

    ocfg = None
    if bcfg.insert_after != "none":
        osec = dict(sections.get("oudefend", {}))
        if args.reduce_ratio is not None:
            osec["reduce_ratio"] = str(args.reduce_ratio)
        if args.branch_mode is not None:
            osec["branch_mode"] = args.branch_mode
        ocfg = oudefend_from_section(osec, bcfg.stage_width(bcfg.insert_after))

    tsec = dict(sections.get("train", {}))
    for key in ("epochs", "batch_size", "lr", "momentum", "weight_decay", "seed", "mode"):
        v = getattr(args, key, None)
        if v is not None:
            tsec[key] = str(v)
    attack = _attack_from_args(args, sections.get("attack"))
    if tsec.get("mode") == "adversarial" and attack is None:
        raise ConfigError("adversarial training needs --attack")
    tcfg = train_from_section(tsec, train_attack=attack)

    model = init_model(bcfg, ocfg, seed=tcfg.seed)
    report = fit(model, train, test, tcfg)
    ckpt_io.save_checkpoint(args.out, ckpt_io.checkpoint_from_model(model, epoch=tcfg.epochs))
    if args.report:
        report.save(args.report)
    final = report.records[-1]
    total = param_count(model.params)
    block = param_count(model.params, "oudefend")
    print(f"trained {tcfg.mode} model: params={total} (block={block}) "
          f"final_loss={final.train_loss:.4f} clean_acc={final.clean_acc:.2f}")
    print(f"checkpoint -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    model, _ = _load_model(args.checkpoint)
    _, test = load_dataset(args.data)
    attack = _attack_from_args(args)
    acc = evaluate(model, test, attack=attack, batch_size=args.batch_size)
    metric = "clean_acc" if attack is None else "robust_acc"
    print(f"{metric}={acc:.2f}")
    return 0


def cmd_attack(args) -> int:
    model, _ = _load_model(args.checkpoint)
    _, test = load_dataset(args.data)
    attack = _attack_from_args(args)
    if attack is None:
        raise ConfigError("attack subcommand needs --attack")
    n = min(args.limit, len(test)) if args.limit else len(test)
    x = test.pixels[:n]
    labels = test.labels[:n]
    result = run_attack(ModelClosure(model), x, labels, attack)
    report = verify_attack_constraints(x, result, attack)
    for line in report.lines():
        print(line)
    print(f"{'PASS' if report.passed else 'FAIL'} {attack_name(attack)}: "
          f"{n} samples, final_loss={result.loss_trace[-1]:.4f}")
    return 0 if report.passed else RUNTIME_ERROR


def cmd_grad_check(args) -> int:
    failures, worst = run_random_graph_checks(args.trials, seed=args.seed)
    status = "PASS" if failures == 0 else "FAIL"
    print(f"{status} grad-check: trials={args.trials} failures={failures} "
          f"worst_abs_err={worst:.3e}")
    return 0 if failures == 0 else RUNTIME_ERROR


def cmd_export_features(args) -> int:
    model, _ = _load_model(args.checkpoint)
    _, test = load_dataset(args.data)
    if not 0 <= args.sample < len(test):
        raise ConfigError(f"--sample must be in [0, {len(test)})")
    attack = _attack_from_args(args)
    paths = export_feature_maps(model, test.pixels[args.sample],
                                int(test.labels[args.sample]), args.stage, attack, args.out_dir)
    print(f"wrote {len(paths)} files to {args.out_dir}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="oudefend", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic video dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--num-train", dest="num_train", type=int)
    p.add_argument("--num-test", dest="num_test", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a classifier (clean or adversarial)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="write the per-epoch report (TSV)")
    p.add_argument("--mode", choices=("clean", "adversarial"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr")
    p.add_argument("--momentum")
    p.add_argument("--weight-decay", dest="weight_decay")
    p.add_argument("--seed", type=int)
    p.add_argument("--insert-after", dest="insert_after",
                   choices=("none", "conv2", "conv3", "conv4", "conv5"))
    p.add_argument("--reduce-ratio", dest="reduce_ratio", type=int)
    p.add_argument("--branch-mode", dest="branch_mode", choices=("full", "u_only", "o_only"))
    p.add_argument("--config")
    _add_attack_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy on the test split, optionally attacked")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=16)
    _add_attack_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attack", help="run one attack and certify its constraints")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--limit", type=int, default=16, help="attack at most N test samples")
    _add_attack_flags(p, required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("grad-check", help="finite-difference checks on random graphs")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("export-features", help="write stage activations as P5/P6 images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--stage", required=True, choices=("conv2", "conv3", "conv4", "conv5"))
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    _add_attack_flags(p)
    p.set_defaults(func=cmd_export_features)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except OUDefendError as e:
        sys.stderr.write(f"error: {e}\n")
        return RUNTIME_ERROR
    except OSError as e:
        sys.stderr.write(f"error: {e}\n")
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
