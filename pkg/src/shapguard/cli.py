"""Command-line entry points for the pipeline stages.

Exit codes: 0 success, 1 usage/config error, 2 stage failure,
3 invariant-check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_STAGE = 2
EXIT_INVARIANT = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="shapguard",
        description="Train an IoT NIDS, attack it, fingerprint attributions, "
        "and detect adversarial traffic via autoencoder reconstruction error.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "ingest": "ingest or synthesize the dataset and persist the splits",
        "train-nids": "train the reference classifier",
        "attack": "craft adversarial examples from the test split",
        "fingerprint": "compute attribution fingerprints",
        "train-detector": "train the autoencoder and calibrate the threshold",
        "evaluate": "emit the full report bundle",
        "detect": "score a dataset CSV through the detection pipeline",
        "run-all": "run every stage in order",
    }
    for name, help_text in commands.items():
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", help="JSON config file (defaults apply otherwise)")
        cmd.add_argument("--out", help="output directory (overrides config out_dir)")
        cmd.add_argument("--seed", type=int, help="master seed override")
        if name == "attack":
            cmd.add_argument(
                "--attack",
                choices=[*pipeline.ATTACK_KINDS, "all"],
                default="all",
                help="which attack to craft",
            )
        if name == "fingerprint":
            cmd.add_argument(
                "--source",
                choices=["clean", *pipeline.ATTACK_KINDS, "all"],
                default="all",
                help="which fingerprints to compute",
            )
        if name == "detect":
            cmd.add_argument(
                "--input",
                required=True,
                help="dataset CSV in scaled feature space to score",
            )
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)

    user_cfg = None
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                user_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"shapguard: cannot read config {args.config}: {exc}", file=sys.stderr)
            return EXIT_USAGE
    try:
        cfg = pipeline.resolve_config(user_cfg, seed_override=args.seed, out_override=args.out)
    except pipeline.ConfigError as exc:
        print(f"shapguard: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    ws = pipeline.Workspace(cfg["out_dir"], cfg)
    ws.write_resolved_config()
    try:
        if args.command == "ingest":
            pipeline.cmd_ingest(ws)
        elif args.command == "train-nids":
            pipeline.cmd_train_nids(ws)
        elif args.command == "attack":
            kinds = pipeline.ATTACK_KINDS if args.attack == "all" else (args.attack,)
            for kind in kinds:
                pipeline.cmd_attack(ws, kind)
        elif args.command == "fingerprint":
            pipeline.cmd_fingerprint(ws, args.source)
        elif args.command == "train-detector":
            pipeline.cmd_train_detector(ws)
        elif args.command == "evaluate":
            pipeline.cmd_evaluate(ws)
        elif args.command == "detect":
            pipeline.cmd_detect(ws, args.input)
        else:
            pipeline.cmd_run_all(ws)
    except pipeline.ConfigError as exc:
        print(f"shapguard: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except pipeline.InvariantError as exc:
        print(f"shapguard: invariant check failed: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except pipeline.StageError as exc:
        print(f"shapguard: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
