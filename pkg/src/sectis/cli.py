"""Command-line front end: run, baseline, sweep, verify-demo."""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .attacks import AttackConfig
from .cas import BlobStore, Digest
from .commitments import REJECT_MESSAGE, generate_proof, setup_params, tamper
from .data import DARKNET_CLASSES, make_blobs
from .errors import ConfigInvalid, DatasetLoadError, SectisError
from .ledger import Ledger
from .nn import Hyperparams, init_model, predict_proba, train_local
from .simulator import (
    ExperimentConfig,
    run_experiment,
    run_no_reputation_baseline,
    write_outputs,
)
from .validation import ValidatorTestSet

log = logging.getLogger("sectis")


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    text = text.strip()
    if not text:
        return []
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _pairs(text: str) -> dict[int, int]:
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        try:
            v, c = item.split(":")
            out[int(v)] = int(c)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected validator:colluder pairs, got {item!r}")
    return out


def _class_index(text: str) -> int:
    if text.lstrip("-").isdigit():
        return int(text)
    norm = text.lower().replace("-", "")
    for i, name in enumerate(DARKNET_CLASSES):
        if name.lower().replace("-", "") == norm:
            return i
    raise argparse.ArgumentTypeError(f"unknown class {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _byz_sets(text: str) -> list[list[int]]:
    return [_int_list(part) for part in text.split(";") if part.strip()]


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with ExperimentConfig fields")
    p.add_argument("--dataset", help='CSV path or "synthetic"')
    p.add_argument("--label-column")
    p.add_argument("--clients", type=int)
    p.add_argument("--validators", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--byzantine", type=_int_list, help='e.g. "2,5,8"')
    p.add_argument("--flip-frac", type=float)
    p.add_argument("--source-class", type=_class_index)
    p.add_argument("--target-class", type=_class_index)
    p.add_argument("--faulty-validators", type=_pairs, help='validator:colluder, e.g. "0:5,1:5,2:2"')
    p.add_argument("--alpha", type=float)
    p.add_argument("--top-frac", type=float)
    p.add_argument("--centroid", choices=["mean", "medoid"])
    p.add_argument("--group", choices=["modp2048", "toy64"])
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--exclude-self", action="store_true", help="validators skip their own model")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, default=Path("out"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sectis", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run one experiment"),
                           ("baseline", "run without validators or reputation")):
        _add_experiment_flags(sub.add_parser(name, help=helptext))
    sweep = sub.add_parser("sweep", help="grid over flip fractions and Byzantine sets")
    _add_experiment_flags(sweep)
    sweep.add_argument("--flip-fracs", type=_float_list, default=[0.1, 0.2, 0.3, 0.4, 0.5])
    sweep.add_argument("--byzantine-sets", type=_byz_sets, default=[[5], [2, 5], [2, 5, 8]],
                       help='";"-separated sets, e.g. "5;2,5;2,5,8"')
    sweep.add_argument("--no-baseline", action="store_true",
                       help="skip the paired run without reputation")
    demo = sub.add_parser("verify-demo", help="show proof tamper detection")
    demo.add_argument("--seed", type=int, default=0)
    demo.add_argument("--group", choices=["modp2048", "toy64"], default="modp2048")
    demo.add_argument("--force-accept", action="store_true", help=argparse.SUPPRESS)
    return parser


def config_from_args(args) -> ExperimentConfig:
    base: dict = {}
    if args.config is not None:
        try:
            base = json.loads(args.config.read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}")
    attack = dict(base.pop("attack", {}) or {})
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(base) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    overrides = {
        "dataset": args.dataset, "label_column": args.label_column,
        "n_clients": args.clients, "n_validators": args.validators,
        "rounds": args.rounds, "alpha": args.alpha, "top_fraction": args.top_frac,
        "centroid": args.centroid, "group": args.group, "seed": args.seed,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    if args.no_normalize:
        base["normalize"] = False
    if args.exclude_self:
        base["include_self"] = False
    attack_over = {
        "byzantine_ids": args.byzantine, "flip_fraction": args.flip_frac,
        "source_class": args.source_class, "target_class": args.target_class,
        "faulty_validator_map": args.faulty_validators,
    }
    attack.update({k: v for k, v in attack_over.items() if v is not None})
    try:
        attack.setdefault("seed", base.get("seed", 0))
        cfg = ExperimentConfig(**base, attack=AttackConfig(**attack))
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc))
    return cfg


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    result = run_experiment(cfg)
    out = write_outputs(result, cfg, args.out)
    _print_final(result, out)
    return 0


def cmd_baseline(args) -> int:
    cfg = config_from_args(args)
    result = run_no_reputation_baseline(cfg)
    out = write_outputs(result, dataclasses.replace(cfg, use_reputation=False, top_fraction=1.0), args.out)
    _print_final(result, out)
    return 0


def _print_final(result, out) -> None:
    if result.metrics:
        k, f1, ctmr, recall, _ = result.metrics[-1]
        print(f"round={k} f1={f1:.4f} ctmr={ctmr:.2f} source_recall={recall:.2f} out={out}")
    else:
        print(f"no rounds run; out={out}")


def cmd_sweep(args) -> int:
    if not args.flip_fracs or not args.byzantine_sets:
        raise UsageError("sweep needs at least one flip fraction and one Byzantine set")
    base = config_from_args(args)
    args.out.mkdir(parents=True, exist_ok=True)
    header = ["byzantine", "flip_frac", "f1", "ctmr", "source_recall"]
    if not args.no_baseline:
        header += ["baseline_f1", "baseline_ctmr", "baseline_source_recall"]
    rows = []
    for byz, frac in itertools.product(args.byzantine_sets, args.flip_fracs):
        attack = dataclasses.replace(base.attack, byzantine_ids=frozenset(byz), flip_fraction=frac)
        cfg = dataclasses.replace(base, attack=attack)
        cfg.validate()
        cell = args.out / f"byz-{'_'.join(map(str, byz)) or 'none'}__flip-{frac:g}"
        result = run_experiment(cfg)
        write_outputs(result, cfg, cell)
        row = [" ".join(map(str, byz)), frac]
        row += list(result.metrics[-1][1:4]) if result.metrics else ["", "", ""]
        if not args.no_baseline:
            base_res = run_no_reputation_baseline(cfg)
            write_outputs(base_res, dataclasses.replace(cfg, use_reputation=False, top_fraction=1.0),
                          cell / "baseline")
            row += list(base_res.metrics[-1][1:4]) if base_res.metrics else ["", "", ""]
        rows.append(row)
        print(f"{cell.name}: " + " ".join(f"{h}={v}" for h, v in zip(header[2:], row[2:])))
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    (args.out / "summary.csv").write_text("\n".join(lines) + "\n")
    return 0


def _flip_first_hex(d: Digest) -> Digest:
    h = d.hex
    return Digest.from_hex(("0" if h[0] != "0" else "1") + h[1:])


def cmd_verify_demo(args) -> int:
    """Train a small model, prove one validation, then try four forgeries."""
    params = setup_params(args.seed, args.group)
    data = make_blobs(args.seed, total=600)
    model = train_local(init_model(args.seed, data.n_features, data.n_classes), data,
                        Hyperparams(local_epochs=3), args.seed)
    cas = BlobStore()
    ledger = Ledger(cas)
    ledger.publish_params(params)
    owner = ledger.register_node("org-demo").node_id
    model_digest = cas.put(model.to_bytes())
    verifier = ledger.verifier(ledger.deploy_verifier(owner, model_digest))
    verifier.force_accept = args.force_accept
    testset = ValidatorTestSet(data.subset(np.arange(32)))
    outputs = predict_proba(model, testset.data.features)

    honest = generate_proof(testset.digest, model_digest, outputs, params)
    forged_out = np.array(outputs)
    forged_out[0, 0] = 1e63
    cases = [
        ("1", "Data Hash", honest.revealed_data_digest.hex[:6],
         tamper(honest, revealed_data_digest=_flip_first_hex(honest.revealed_data_digest)),
         lambda p: p.revealed_data_digest.hex[:6]),
        ("2", "ECP", str(honest.data_commit)[-6:],
         tamper(honest, data_commit=(honest.data_commit + 1) % params.p),
         lambda p: str(p.data_commit)[-6:]),
        ("3", "Model Hash", honest.revealed_model_digest.hex[:8],
         tamper(honest, revealed_model_digest=_flip_first_hex(honest.revealed_model_digest)),
         lambda p: p.revealed_model_digest.hex[:8]),
        ("4", "Public Output", f"{outputs[0, 0]:.6g}",
         tamper(honest, revealed_outputs=forged_out),
         lambda p: f"{p.revealed_outputs[0, 0]:.6g}"),
    ]
    ok = True
    print("scenario\tfield\tvalid\tnot_valid\tvalid_output\tnot_valid_output")
    for sid, field, valid_val, forged, show in cases:
        good = verifier.verify(honest)
        bad = verifier.verify(forged)
        ok &= good.accepted and not bad.accepted and bad.output == REJECT_MESSAGE
        print(f"{sid}\t{field}\t{valid_val}\t{show(forged)}\t{good.output}\t{bad.output}")
    print(f"result\t{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


COMMANDS = {"run": cmd_run, "baseline": cmd_baseline, "sweep": cmd_sweep,
            "verify-demo": cmd_verify_demo}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigInvalid, DatasetLoadError) as exc:
        print(f"sectis: error: {exc}", file=sys.stderr)
        return 2
    except SectisError as exc:
        print(f"sectis: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
