"""Command-line entry point.

    autoprov synth --out demo
    autoprov pipeline --config demo/config.toml
    autoprov detect --config demo/config.toml --set detect.n_seed=5

Exit codes: 0 success, 1 invalid configuration or usage, 2 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .pipeline import STAGES, ConfigError, StageError, execute, load_config, run_pipeline
from .synthgen import CorpusSpec, generate, write_corpus

log = logging.getLogger("autoprov")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # usage errors count as validation errors
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


CONFIG_TEMPLATE = """\
# stub-mode run over a generated corpus
[run]
seed = {seed}

[paths]
benign_logs = ["benign.log"]
test_logs = ["test.log"]
db_dir = "db"
out_dir = "out"
truth_types = "truth_types.jsonl"
truth_attacks = "truth_attacks.jsonl"

[chat]
kind = "stub"
script = "stub_script.jsonl"

[embedding]
kind = "hashing"
dim = 256

[cluster]
radius = 0.3
decay = 0.0
w_min = 0.5
k = 32
m = 3
window_size = 1000

[cpe]
n_votes = 7

[rules]
max_repair = 1

[enrich]
max_sweeps = 3

[detect]
n_seed = 10

[eval]
rates = [0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100]
"""


def cmd_synth(args: argparse.Namespace) -> int:
    try:
        spec = CorpusSpec.load(args.spec) if args.spec else CorpusSpec()
        if args.seed is not None:
            spec.seed = args.seed
        if args.n_benign is not None:
            spec.n_benign = args.n_benign
        if args.n_test is not None:
            spec.n_test = args.n_test
        spec.validate()
    except (OSError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid corpus spec: {exc}") from exc
    out = Path(args.out)
    paths = write_corpus(generate(spec), out)
    (out / "config.toml").write_text(CONFIG_TEMPLATE.format(seed=spec.seed), encoding="utf-8")
    print(json.dumps({k: str(v) for k, v in sorted(paths.items())}, indent=2))
    return EXIT_OK


def _stage_command(name: str):
    def run(args: argparse.Namespace) -> int:
        cfg = load_config(args.config, args.set)
        execute(cfg, [name], resume=False)
        print(f"{name}: done")
        return EXIT_OK
    return run


def cmd_pipeline(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.set)
    for name, ran in run_pipeline(cfg, resume=not args.no_resume):
        print(f"{name}: {'done' if ran else 'skipped (unchanged)'}")
    report = cfg.out_dir / "report.txt"
    if report.exists():
        print()
        print(report.read_text(encoding="utf-8"), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="autoprov", description="Log-to-provenance pipeline with LLM-assisted stages.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic corpus, ground truth, stub script and config")
    s.add_argument("--out", required=True)
    s.add_argument("--spec", help="CorpusSpec JSON file")
    s.add_argument("--seed", type=int)
    s.add_argument("--n-benign", type=int)
    s.add_argument("--n-test", type=int)
    s.set_defaults(func=cmd_synth)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config value (repeatable)")

    p = sub.add_parser("pipeline", help="run every stage, resuming from completed ones")
    common(p)
    p.add_argument("--no-resume", action="store_true", help="re-run every stage")
    p.set_defaults(func=cmd_pipeline)

    for name in STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage")
        common(p)
        p.set_defaults(func=_stage_command(name))
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"autoprov: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"autoprov: stage {exc.stage} failed: {exc.cause}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
