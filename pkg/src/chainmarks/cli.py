"""Command-line entry point: ``chainmarks {chain,embed,estimate,verify,attack}``.

Exit codes: 0 success / accepted / no attack succeeded, 1 verification
rejected or some attack succeeded, 2 usage, input or format error.
The seed is read from a file or an environment variable, never from argv.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .attacks import AttackConfig, default_battery, identity_battery, run_battery
from .datasets import load_csv, make_blobs
from .errors import ChainMarksError
from .model_core import TrainConfig, load_model, save_model
from .protocol import WatermarkSpec, embed, verify, verify_disclosed
from .signature_codec import (
    LabelSequence,
    encode_signature,
    pad_or_truncate,
    signature_from_owner,
)
from .threshold_stats import (
    ClassDistribution,
    ThresholdDecision,
    decide_threshold,
    estimate_distribution,
)
from .trigger_chain import (
    HashAlg,
    InputShape,
    disclose_prefix,
    dump_chain,
    generate_chain,
    read_chain,
    save_chain,
)

SEED_ENV = "CHAINMARKS_SEED"
DEFAULT_SHAPE = "3x16x16"

log = logging.getLogger("chainmarks")


class UsageError(ChainMarksError):
    pass


# -- argument helpers --------------------------------------------------------


def _add_seed(p):
    p.add_argument("--seed-file", type=Path, help="file holding the secret seed bytes")
    p.add_argument(
        "--seed-env", metavar="VAR",
        help=f"environment variable holding the seed (default: {SEED_ENV} if set)",
    )


def _add_signature(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--signature-file", type=Path, help="raw signature bytes")
    g.add_argument("--owner", help="owner name; signature is its SHA-256")


def _add_chain_params(p):
    p.add_argument("--shape", default=DEFAULT_SHAPE, help="input shape, e.g. 3x32x32")
    p.add_argument("-L", type=int, default=100, dest="L", help="chain length")
    p.add_argument("--hash", default="sha256", choices=["sha256", "sha1", "md5"])


def _add_data(p):
    p.add_argument("--dataset", type=Path, help="training CSV (default: synthetic blobs)")
    p.add_argument("--test-dataset", type=Path, help="test CSV")
    p.add_argument("--classes", type=int, default=10, help="class count C")
    p.add_argument("--data-seed", type=int, default=0, help="synthetic task seed")


def _add_decision(p):
    p.add_argument("--decision", type=Path, help="JSON written by 'estimate'")
    p.add_argument("--p-target", type=float, help="p-value; estimates a threshold if no --decision")
    p.add_argument("-N", type=int, default=10**6, dest="N", help="phase-1 probe count")
    p.add_argument("--trials", type=int, default=50, help="phase-2 trials")
    p.add_argument("--budget", type=int, default=10**7, help="phase-2 probes per trial")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chainmarks", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"chainmarks {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("chain", help="write a trigger chain file")
    _add_seed(p)
    _add_chain_params(p)
    p.add_argument("--prefix", type=int, help="write only B_1..B_n")
    p.add_argument("-o", "--out", type=Path, required=True)

    p = sub.add_parser("embed", help="train a watermarked model")
    _add_seed(p)
    _add_signature(p)
    _add_chain_params(p)
    _add_data(p)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--watermark-weight", type=int, default=TrainConfig.watermark_weight)
    p.add_argument("--rng-seed", type=int, required=True)
    p.add_argument("-o", "--out", type=Path, required=True, help="model file")
    p.add_argument("--report", type=Path, help="embed report JSON (default: stdout)")

    p = sub.add_parser("estimate", help="estimate class distribution and threshold")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("-N", type=int, default=10**6, dest="N")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--budget", type=int, default=10**7)
    p.add_argument("--p-target", type=float, default=1e-7)
    p.add_argument("-L", type=int, default=100, dest="L")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--probe", choices=["uniform", "bytes"], default="uniform",
                   help="random inputs: continuous uniform, or byte values like triggers")
    _add_signature(p, required=False)
    p.add_argument("--rng-seed", type=int, required=True)
    p.add_argument("-o", "--out", type=Path, help="JSON output (default: stdout)")

    p = sub.add_parser("verify", help="verify a watermark claim")
    p.add_argument("--model", type=Path, required=True)
    _add_seed(p)
    p.add_argument("--chain", type=Path, help="disclosed chain file instead of a seed")
    _add_signature(p)
    _add_chain_params(p)
    _add_decision(p)
    p.add_argument("--rng-seed", type=int, default=None)
    p.add_argument("-o", "--out", type=Path, help="report JSON (default: stdout)")

    p = sub.add_parser("attack", help="run removal / ambiguity attacks")
    p.add_argument("--model", type=Path, required=True)
    _add_seed(p)
    _add_signature(p)
    _add_chain_params(p)
    _add_data(p)
    _add_decision(p)
    p.add_argument(
        "--attack", action="append", default=None,
        help="attack kind (repeatable), or 'default' / 'identity' battery",
    )
    p.add_argument("--battery", type=Path, help="JSON list of {kind, params, name}")
    p.add_argument("--rng-seed", type=int, required=True)
    p.add_argument("-o", "--out", type=Path, help="robustness JSON (default: stdout)")
    p.add_argument("--table", type=Path, help="also write the plain-text table here")
    return parser


# -- input resolution ----------------------------------------------------------


def _require_files(*paths):
    for path in paths:
        if path is not None and not Path(path).is_file():
            raise UsageError(f"no such file: {path}")


def _require_out_dirs(*paths):
    for path in paths:
        if path is not None and not Path(path).resolve().parent.is_dir():
            raise UsageError(f"output directory does not exist: {Path(path).parent}")


def read_seed(args) -> bytes:
    if args.seed_file is not None:
        _require_files(args.seed_file)
        return args.seed_file.read_bytes()
    var = args.seed_env or SEED_ENV
    value = os.environ.get(var)
    if value is None:
        if args.seed_env:
            raise UsageError(f"--seed-env: environment variable {var} is not set")
        raise UsageError(f"missing seed: pass --seed-file or --seed-env (or set {SEED_ENV})")
    return value.encode("utf-8")


def read_signature(args) -> bytes | None:
    if getattr(args, "signature_file", None) is not None:
        _require_files(args.signature_file)
        return args.signature_file.read_bytes()
    if getattr(args, "owner", None):
        return signature_from_owner(args.owner)
    return None


def _datasets(args):
    if args.dataset is not None:
        train = load_csv(args.dataset, args.classes)
        test = load_csv(args.test_dataset, args.classes) if args.test_dataset else None
        return train, test
    shape = InputShape.parse(args.shape)
    return make_blobs(args.classes, shape.byte_len, seed=args.data_seed)


def _effective_config(args) -> dict:
    cfg = {}
    for k, v in vars(args).items():
        if k in ("func",):
            continue
        cfg[k] = str(v) if isinstance(v, Path) else v
    return cfg


def _emit(payload: dict, out: Path | None):
    text = json.dumps(payload, indent=2, sort_keys=False)
    if out is None:
        print(text)
    else:
        out.write_text(text + "\n")


def _load_decision(args, model, labels: LabelSequence):
    """Return (distribution or None, decision) from --decision or a fresh estimate."""
    if args.decision is not None:
        doc = json.loads(args.decision.read_text())
        dist = ClassDistribution.from_json(doc) if "probs" in doc else None
        p_target = args.p_target if args.p_target is not None else doc["decision"]["p_target"]
        if dist is not None and (
            args.p_target is not None or doc["decision"].get("L") != len(labels)
        ):
            return dist, decide_threshold(dist, labels, p_target)
        return dist, ThresholdDecision.from_json(doc["decision"])
    if args.p_target is None:
        raise UsageError("pass --decision or --p-target")
    if args.rng_seed is None:
        raise UsageError("--rng-seed is required to estimate a threshold")
    dist = estimate_distribution(model, args.N, args.rng_seed, args.trials, args.budget)
    return dist, decide_threshold(dist, labels, args.p_target)


# -- commands ------------------------------------------------------------------


def cmd_chain(args) -> int:
    _require_out_dirs(args.out)
    seed = read_seed(args)
    chain = generate_chain(seed, InputShape.parse(args.shape), args.L, HashAlg.parse(args.hash))
    if args.prefix is not None:
        blocks = disclose_prefix(chain, args.prefix)
        args.out.write_bytes(dump_chain(blocks, chain.shape, chain.hash_alg))
    else:
        save_chain(chain, args.out)
    return 0


def cmd_embed(args) -> int:
    _require_files(args.dataset, args.test_dataset)
    _require_out_dirs(args.out, args.report)
    seed = read_seed(args)
    spec = WatermarkSpec(
        seed, read_signature(args), args.classes, args.L,
        InputShape.parse(args.shape), HashAlg.parse(args.hash),
    )
    train, test = _datasets(args)
    cfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
        rng_seed=args.rng_seed, watermark_weight=args.watermark_weight,
    )
    model, report = embed(spec, train, cfg, test)
    save_model(model, args.out)
    payload = report.to_json()
    payload["watermark"] = spec.public_json()
    payload["train_config"] = cfg.to_json()
    payload["config"] = _effective_config(args)
    _emit(payload, args.report)
    return 0


def cmd_estimate(args) -> int:
    _require_files(args.model)
    _require_out_dirs(args.out)
    model = load_model(args.model)
    sig = read_signature(args)
    labels = None
    if sig is not None:
        labels = pad_or_truncate(encode_signature(sig, model.num_classes), args.L)
    if not 0 < args.p_target < 1:
        raise UsageError(f"--p-target must be in (0, 1), got {args.p_target}")
    dist = estimate_distribution(
        model, args.N, args.rng_seed, args.trials, args.budget,
        workers=args.workers, probe=args.probe,
    )
    payload = {"version": __version__, **dist.to_json()}
    if labels is not None:
        payload["decision"] = decide_threshold(dist, labels, args.p_target).to_json()
    payload["config"] = _effective_config(args)
    _emit(payload, args.out)
    return 0


def cmd_verify(args) -> int:
    _require_files(args.model, args.chain, args.decision)
    _require_out_dirs(args.out)
    model = load_model(args.model)
    sig = read_signature(args)
    C = model.num_classes
    if args.chain is not None:
        chain = read_chain(args.chain)
        labels = pad_or_truncate(encode_signature(sig, C), args.L)
        n = chain.length
        if n > len(labels):
            raise UsageError(f"chain has {n} blocks but -L is {len(labels)}")
        prefix = LabelSequence(C, labels.digits[:n])
        dist, decision = _load_decision(args, model, prefix)
        if dist is None:
            raise UsageError("disclosed-chain verification needs a --decision file with a distribution")
        report = verify_disclosed(
            model, list(chain.blocks), prefix, dist, decision.p_target, chain.hash_alg
        )
    else:
        seed = read_seed(args)
        spec = WatermarkSpec(seed, sig, C, args.L, InputShape.parse(args.shape), HashAlg.parse(args.hash))
        _, decision = _load_decision(args, model, spec.labels)
        report = verify(model, seed, sig, C, args.L, spec.shape, decision, spec.hash_alg)
    payload = report.to_json()
    payload["config"] = _effective_config(args)
    _emit(payload, args.out)
    return 0 if report.accepted else 1


def _battery(args) -> list[AttackConfig]:
    configs = []
    if args.battery is not None:
        for item in json.loads(args.battery.read_text()):
            configs.append(AttackConfig(item["kind"], item.get("params", {}), item.get("name")))
    for name in args.attack or ([] if configs else ["default"]):
        if name == "default":
            configs += default_battery()
        elif name == "identity":
            configs += identity_battery()
        else:
            configs.append(AttackConfig(name))
    return configs


def cmd_attack(args) -> int:
    _require_files(args.model, args.dataset, args.test_dataset, args.decision, args.battery)
    _require_out_dirs(args.out, args.table)
    configs = _battery(args)
    model = load_model(args.model)
    seed = read_seed(args)
    spec = WatermarkSpec(
        seed, read_signature(args), model.num_classes, args.L,
        InputShape.parse(args.shape), HashAlg.parse(args.hash),
    )
    args.classes = model.num_classes
    train, test = _datasets(args)
    if test is None:
        raise UsageError("attacks need a test set (--test-dataset)")
    _, decision = _load_decision(args, model, spec.labels)
    matrix = run_battery(model, spec, decision, configs, train, test, args.rng_seed)
    payload = matrix.to_json()
    payload["config"] = _effective_config(args)
    _emit(payload, args.out)
    table = matrix.to_table()
    if args.table is not None:
        args.table.write_text(table + "\n")
    else:
        print(table, file=sys.stderr)
    return 1 if any(r.success for r in matrix.rows) else 0


COMMANDS = {
    "chain": cmd_chain,
    "embed": cmd_embed,
    "estimate": cmd_estimate,
    "verify": cmd_verify,
    "attack": cmd_attack,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (ChainMarksError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"chainmarks {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
