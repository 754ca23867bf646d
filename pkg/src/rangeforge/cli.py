"""``rangeforge`` command line: one verb per operation chain.

Exit codes: 0 success, 1 validation error, 2 runtime failure, 3 QA no-go.
Diagnostics go to stderr; machine output goes to stdout or the run directory.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from pathlib import Path

from rangeforge import __version__, netrange
from rangeforge.config import RunConfig, input_paths, load_config, resolve
from rangeforge.corpus import write_sample_set
from rangeforge.errors import RangeForgeError, ValidationError
from rangeforge.journal import RunJournal
from rangeforge.scheduler import SocketFeed, execute, qa_run, replay_journal
from rangeforge.scoring import cost_score, format_table, tally

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_NO_GO = 0, 1, 2, 3


class _Usage(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits 2 by default; usage errors are validation errors here
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID)


def _out_root(args) -> Path:
    if os.environ.get("RANGEFORGE_OUT"):
        return Path(os.environ["RANGEFORGE_OUT"])
    return Path(args.out) if args.out else Path("runs")


def _new_run_dir(root: Path, stem: str) -> Path:
    """Claim a fresh directory; existing run directories are never reused."""
    root.mkdir(parents=True, exist_ok=True)
    n = 1
    while True:
        candidate = root / f"{stem}-{n:04d}"
        try:
            candidate.mkdir()
            return candidate
        except FileExistsError:
            n += 1


def _load(args) -> tuple[RunConfig, Path]:
    config, base = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config, base


def _emit(data: dict, fmt: str, table: str | None = None) -> None:
    if fmt == "table" and table is not None:
        print(table)
    else:
        print(json.dumps(data, indent=2, sort_keys=True))


def _copy_inputs(config: RunConfig, base: Path, run_dir: Path) -> None:
    dest = run_dir / "inputs"
    dest.mkdir()
    for ref in input_paths(config):
        src = Path(ref) if Path(ref).is_absolute() else base / ref
        rel = Path(ref)
        if rel.is_absolute() or ".." in rel.parts:
            rel = Path(rel.name)
        (dest / rel).parent.mkdir(parents=True, exist_ok=True)
        shutil.copy2(src, dest / rel)
    (dest / "config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8")


def _is_net_config(path: str) -> bool:
    from rangeforge.config import BUILTIN_DIR

    p = Path(path)
    if not p.exists():
        p = BUILTIN_DIR / f"{path}.json"
    try:
        return "timeline" in json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return False


def _load_net(args) -> tuple[netrange.NetChallenge, Path]:
    from rangeforge.config import BUILTIN_DIR

    p = Path(args.config)
    if not p.exists():
        p = BUILTIN_DIR / f"{args.config}.json"
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read net config {args.config}: {exc}") from exc
    if args.seed is not None:
        data["seed"] = args.seed
    return netrange.NetChallenge.from_dict(data), p.parent


# -- verbs ---------------------------------------------------------------------


def cmd_validate(args) -> int:
    if _is_net_config(args.config):
        challenge, _ = _load_net(args)
        _emit({"valid": True, "kind": "net", "name": challenge.name, "devices": len(challenge.devices)}, "json")
        return EXIT_OK
    config, base = _load(args)
    resolved = resolve(config, base)
    info = {
        "valid": True,
        "kind": "endpoint",
        "name": config.name,
        "config_digest": config.digest(),
        "samples": len(resolved.sample_set),
        "logical_nodes": len(resolved.nodes),
        "detector": resolved.model.name,
    }
    _emit(info, "json")
    return EXIT_OK


def cmd_corpus_sample(args) -> int:
    config, base = _load(args)
    sset = resolve(config, base).sample_set
    if args.out:
        path = write_sample_set(sset, Path(args.out))
        print(f"wrote {len(sset)} samples to {path}", file=sys.stderr)
    else:
        sys.stdout.write(sset.to_jsonl())
    print(sset.digest())
    return EXIT_OK


def cmd_run(args) -> int:
    config, base = _load(args)
    resolved = resolve(config, base)
    listeners = []
    feed = SocketFeed(args.feed) if args.feed else None
    if feed:
        listeners.append(feed)
    try:
        outcome = execute(config, base, listeners, resolved=resolved)
    finally:
        if feed:
            feed.close()
    run_dir = _new_run_dir(_out_root(args), f"{config.name}-s{config.seed}")
    outcome.journal.write(run_dir / "journal.jsonl")
    _copy_inputs(config, base, run_dir)
    counts = tally(outcome.journal, resolved.sample_set)
    report = cost_score(counts, outcome.journal, config.cost, tool=resolved.model.name)
    body = {
        "run_dir": str(run_dir),
        "digest": outcome.digest,
        "summary": outcome.journal.trailer["summary"],
        "score": report.to_dict(),
        "qa": outcome.qa.to_dict() if outcome.qa else None,
    }
    (run_dir / "report.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"run directory: {run_dir}", file=sys.stderr)
    print(outcome.digest)
    if outcome.aborted:
        print("QA no-go: main sweep skipped", file=sys.stderr)
        return EXIT_NO_GO
    return EXIT_OK


def cmd_qa(args) -> int:
    config, base = _load(args)
    report = qa_run(config, args.subset, base)
    _emit(report.to_dict(), args.format)
    if not report.go:
        for f in report.failure_classes:
            print(f"QA no-go: {f['class']}: {f['detail']}", file=sys.stderr)
        return EXIT_NO_GO
    return EXIT_OK


def _journal_and_base(args) -> tuple[RunJournal, Path]:
    path = Path(args.journal)
    if path.is_dir():
        path = path / "journal.jsonl"
    journal = RunJournal.read(path)
    if args.base_dir:
        return journal, Path(args.base_dir)
    inputs = path.parent / "inputs"
    return journal, inputs if inputs.is_dir() else Path.cwd()


def cmd_score(args) -> int:
    journal, base = _journal_and_base(args)
    journal.verify()
    config = RunConfig.from_dict(journal.header["config"])
    resolved = resolve(config, base)
    counts = tally(journal, resolved.sample_set)
    report = cost_score(counts, journal, config.cost, tool=resolved.model.name)
    _emit(report.to_dict(), args.format, format_table(report))
    return EXIT_OK


def cmd_replay(args) -> int:
    journal, base = _journal_and_base(args)
    result = replay_journal(journal, base, rerun=args.rerun)
    body = {"digest": result.digest, "final_state": result.state.snapshot()}
    if result.counts is not None:
        body["counts"] = result.counts.as_dict()
    if result.rerun_digest is not None:
        body["rerun_digest"] = result.rerun_digest
        body["identical"] = result.rerun_digest == result.digest
    _emit(body, args.format)
    if result.rerun_digest is not None and result.rerun_digest != result.digest:
        print("rerun diverged from the recorded journal", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_net_run(args) -> int:
    challenge, base = _load_net(args)
    run_dir = _new_run_dir(_out_root(args), f"{challenge.name}-s{challenge.seed}")
    report = netrange.run_net_challenge(challenge, run_dir, base)
    (run_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"run directory: {run_dir}", file=sys.stderr)
    if args.format == "table":
        rows = [f"{'device':<12}{'tp':>6}{'fp':>6}{'fn':>6}{'campaigns':>11}"]
        for dev, s in report["scores"].items():
            rows.append(f"{dev:<12}{s['tp']:>6}{s['fp']:>6}{s['fn']:>6}{s['campaigns_detected']:>11}")
        print("\n".join(rows))
    else:
        print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.run) / "report.json"
    try:
        body = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    if args.format == "table" and "score" in body:
        score = body["score"]
        lines = [f"run      {body['run_dir']}", f"digest   {body['digest']}",
                 f"duration {body['summary']['duration_s'] / 3600:.2f} h",
                 f"tool     {score.get('tool', '')}", f"cost     {score['total']:.2f}"]
        print("\n".join(lines))
    else:
        print(json.dumps(body, indent=2, sort_keys=True))
    return EXIT_OK


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", default=None, help="output root or file")
    common.add_argument("--format", choices=("json", "table"), default="json")

    parser = _Usage(prog="rangeforge", description="Simulated cyber-range evaluation harness.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Usage)

    def verb(name, fn, help_, config=True):
        p = sub.add_parser(name, parents=[common], help=help_)
        if config:
            p.add_argument("--config", required=True, help="config path or built-in name")
        p.set_defaults(fn=fn)
        return p

    verb("corpus-sample", cmd_corpus_sample, "build the stratified sample set")
    verb("validate", cmd_validate, "check a config and everything it references")
    run = verb("run", cmd_run, "execute a simulated challenge into a new run directory")
    run.add_argument("--feed", default=None, help="mirror journal events to host:port or unix:path")
    qa = verb("qa", cmd_qa, "run the QA subset only")
    qa.add_argument("--subset", type=int, default=None)
    for name, fn, help_ in (("score", cmd_score, "score a recorded journal"), ("replay", cmd_replay, "verify and replay a journal")):
        p = verb(name, fn, help_, config=False)
        p.add_argument("--journal", required=True, help="journal file or run directory")
        p.add_argument("--base-dir", default=None, help="where referenced inputs live")
        if name == "replay":
            p.add_argument("--rerun", action="store_true", help="re-execute and compare digests")
    verb("net-run", cmd_net_run, "run the network-detection challenge")
    rep = verb("report", cmd_report, "print a run directory's report", config=False)
    rep.add_argument("--run", required=True, help="run directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RangeForgeError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
