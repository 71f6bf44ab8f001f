"""``craftvla`` command line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 judge endpoint failure.
Reports go to files (or stdout with ``-``); progress goes to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import FORMAT_VERSIONS, __version__
from .action_codec import (
    ActionEvent,
    CameraQuantizerConfig,
    all_surfaces,
    decode_actions,
    encode_action,
    format_tokens,
    mu_law_encode,
    parse_token_string,
)
from .errors import CraftVLAError, DataError, JudgeEndpointError
from .evaluation.judge import HttpJudgeClient, StubJudge, load_benchmark, run_judge_eval
from .evaluation.scoring import grounding_accuracy, load_grounding_cases, score_grounding
from .grounding import AffineAugmentSpec, Annotation, PhotometricAugmentSpec, sample_augmentation, transform_annotation
from .rollout import OBSERVED_FPS_ROWS, POLICIES, fit_latency_model, load_task_specs, run_task_suite
from .token_vocab import BaseVocabStats, Strategy, build_vocab, load_vocab, serialize_vocab
from .trajectory import (
    ChunkSchedule,
    dataset_stats,
    load_trajectories,
    pack_dataset,
    read_packed,
    read_samples_jsonl,
    samples_from_trajectories,
    write_samples_jsonl,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("craftvla")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ENDPOINT = 0, 1, 2, 3
SECRET_ENV = "JUDGE_API_KEY"
# Never echoed into output headers: I/O locations, secrets, and knobs that must not change bytes.
_UNECHOED = {"func", "leaf", "command", "action", "config", "jobs", "verbose", "api_key", "input", "output", "trajectories",
             "samples", "vocab", "stats", "annotations", "spec", "cases", "benchmark", "journal", "tasks",
             "episodes_out"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _header(args) -> dict:
    effective = {k: v for k, v in sorted(vars(args).items()) if k not in _UNECHOED and not k.startswith("_")}
    return {
        "tool": "craftvla",
        "version": __version__,
        "formats": FORMAT_VERSIONS,
        "command": f"{args.command} {args.action}",
        "seed": args.seed,
        "config": effective,
    }


def _open_out(path):
    if path in (None, "-"):
        return _Stdout()
    return open(path, "w", encoding="utf-8")


class _Stdout:
    def __enter__(self):
        return sys.stdout

    def __exit__(self, *exc):
        sys.stdout.flush()


def _write_json(path, doc) -> None:
    with _open_out(path) as fh:
        fh.write(json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def _read_lines(path):
    if path == "-":
        return sys.stdin.read().splitlines()
    return Path(path).read_text(encoding="utf-8").splitlines()


def _quantizer(args) -> CameraQuantizerConfig:
    return CameraQuantizerConfig(args.mu, args.max_delta, args.bins)


# ------------------------------------------------------------------ codec


def cmd_codec_encode(args) -> int:
    cfg = _quantizer(args)
    with _open_out(args.output) as out:
        for lineno, line in enumerate(_read_lines(args.input), start=1):
            if not line.strip():
                continue
            try:
                event = ActionEvent.from_record(json.loads(line))
            except (json.JSONDecodeError, TypeError, ValueError) as exc:
                raise DataError(f"line {lineno}: {exc}") from None
            out.write(format_tokens(encode_action(event, cfg)) + "\n")
    return EXIT_OK


def cmd_codec_decode(args) -> int:
    cfg = _quantizer(args)
    with _open_out(args.output) as out:
        for lineno, line in enumerate(_read_lines(args.input), start=1):
            if not line.strip():
                continue
            try:
                events = decode_actions(parse_token_string(line, cfg), cfg)
            except DataError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
            for event in events:
                rec = event.to_record()
                rec["bins"] = [mu_law_encode(event.camera[0], cfg), mu_law_encode(event.camera[1], cfg)]
                out.write(json.dumps(rec) + "\n")
    return EXIT_OK


# ------------------------------------------------------------------ vocab


def cmd_vocab_build(args) -> int:
    strategy = Strategy(args.strategy)
    if args.stats:
        stats = BaseVocabStats.from_json(Path(args.stats).read_text(encoding="utf-8"))
    elif strategy is Strategy.APPEND and args.base_vocab_size is not None:
        stats = BaseVocabStats((), args.base_vocab_size)
    else:
        raise UsageError("vocab build needs --stats (or --base-vocab-size with --strategy append)")
    vocab = build_vocab(stats, strategy)
    with _open_out(args.output) as fh:
        fh.write(serialize_vocab(vocab))
    log.info("bound %d action tokens (%s)", len(vocab.bindings), strategy.value)
    return EXIT_OK


def cmd_vocab_inspect(args) -> int:
    vocab = load_vocab(Path(args.vocab).read_text(encoding="utf-8"))
    ids = [b.id for b in vocab.bindings]
    doc = {
        "header": _header(args),
        "strategy": vocab.strategy.value,
        "base_vocab_size": vocab.base_vocab_size,
        "total_vocab_size": vocab.total_vocab_size,
        "bindings": len(vocab.bindings),
        "id_range": [min(ids), max(ids)] if ids else None,
        "covers_action_grammar": vocab.covers(all_surfaces(_quantizer(args))),
    }
    _write_json(args.output, doc)
    return EXIT_OK


# ---------------------------------------------------------------- dataset


def cmd_dataset_pack(args) -> int:
    if bool(args.trajectories) == bool(args.samples):
        raise UsageError("dataset pack needs exactly one of --trajectories or --samples")
    declared = args.vocab_size
    if args.trajectories:
        if not args.vocab:
            raise UsageError("--trajectories needs --vocab")
        vocab = load_vocab(Path(args.vocab).read_text(encoding="utf-8"))
        schedule = ChunkSchedule()
        horizon = args.chunk if args.chunk is not None else schedule.size(args.phase)
        trajectories = load_trajectories(args.trajectories)
        log.info("loaded %d trajectories", len(trajectories))
        samples = samples_from_trajectories(
            trajectories, vocab, horizon, args.stride, args.history, cfg=_quantizer(args)
        )
        if declared is None:
            declared = vocab.total_vocab_size
    else:
        samples = read_samples_jsonl(args.samples)
    digest = pack_dataset(samples, args.output, declared, _header(args)["config"], jobs=args.jobs)
    log.info("wrote %d samples, sha256 %s", len(samples), digest)
    return EXIT_OK


def cmd_dataset_unpack(args) -> int:
    samples, _ = read_packed(args.input)
    write_samples_jsonl(samples, args.output)
    return EXIT_OK


def cmd_dataset_stats(args) -> int:
    samples, header = read_packed(args.input)
    _write_json(args.output, {"header": _header(args), "dataset_header": header, "stats": dataset_stats(samples).to_dict()})
    return EXIT_OK


# ---------------------------------------------------------------- augment


def _load_spec(path):
    doc = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    unknown = set(doc) - {"affine", "photometric"}
    if unknown:
        raise DataError(f"unknown augmentation tables {sorted(unknown)}")
    try:
        affine = AffineAugmentSpec(**doc.get("affine", {}))
        photo = PhotometricAugmentSpec(**doc.get("photometric", {}))
    except TypeError as exc:
        raise DataError(f"bad augmentation spec: {exc}") from None
    return photo, affine


def cmd_augment_plan(args) -> int:
    fixed = _load_spec(args.spec) if args.spec else None
    rng = np.random.default_rng(args.seed)
    with _open_out(args.output) as out:
        out.write(json.dumps({"header": _header(args)}, sort_keys=True) + "\n")
        for index, line in enumerate(_read_lines(args.annotations)):
            if not line.strip():
                continue
            try:
                ann = Annotation.from_record(json.loads(line))
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"line {index + 1}: {exc}") from None
            if ann.normalized:
                raise DataError(f"line {index + 1}: augment plan needs pixel-space annotations (with 'size')")
            photo, affine = fixed or sample_augmentation(rng, args.phase, ann.size)
            out_size = tuple(args.out_size) if args.out_size else ann.size
            rec = {"index": index, "affine": vars(affine) | {"translate": list(affine.translate)}, "photometric": vars(photo)}
            try:
                rec["annotation"] = transform_annotation(ann, affine, out_size).to_record()
                rec["dropped"] = False
            except DataError as exc:
                rec["annotation"], rec["dropped"], rec["reason"] = None, True, str(exc)
            out.write(json.dumps(rec, sort_keys=True) + "\n")
    return EXIT_OK


# ----------------------------------------------------------------- ground


def cmd_ground_score(args) -> int:
    cases = load_grounding_cases(args.cases)
    kwargs = {"point_threshold": args.threshold, "bbox_mode": args.bbox_mode, "iou_threshold": args.iou_threshold}
    report = grounding_accuracy(cases, **kwargs)
    per_case = [{"id": c.case_id, "outcome": score_grounding(c, **kwargs).value} for c in cases]
    _write_json(args.output, {"header": _header(args), "summary": report.to_dict(), "cases": per_case})
    return EXIT_OK


# ------------------------------------------------------------------ judge


def cmd_judge_run(args) -> int:
    cases = load_benchmark(args.benchmark)
    if args.stub:
        client = StubJudge.exact_match() if args.stub == "match" else StubJudge.always(args.stub)
    else:
        client = HttpJudgeClient(args.base_url, args.api_key or os.environ.get(SECRET_ENV))
    report = run_judge_eval(
        cases,
        client,
        journal_path=args.journal,
        concurrency=args.concurrency,
        max_retries=args.max_retries,
        backoff=args.backoff,
        model=args.model,
    )
    _write_json(args.output, {"header": _header(args), "report": report.to_dict()})
    if not report.complete:
        log.error("%d case(s) could not be graded; report is incomplete", len(report.failed))
        return EXIT_ENDPOINT
    return EXIT_OK


# -------------------------------------------------------------------- sim


def cmd_sim_run(args) -> int:
    tasks = load_task_specs(args.tasks)
    schedule = ChunkSchedule(allow_large=args.allow_large_chunks)
    result = run_task_suite(
        tasks, args.episodes, schedule, POLICIES[args.policy], args.seed, chunk=args.chunk, jobs=args.jobs
    )
    with _open_out(args.output) as fh:
        fh.write(result.report.to_jsonl(_header(args)))
    if args.episodes_out:
        with open(args.episodes_out, "w", encoding="utf-8") as fh:
            for ep in result.episodes:
                fh.write(json.dumps(ep.to_dict(), sort_keys=True) + "\n")
    return EXIT_OK


def _parse_rows(text):
    rows = []
    for item in text.split(","):
        c, _, fps = item.partition(":")
        try:
            rows.append((int(c), float(fps)))
        except ValueError:
            raise UsageError(f"--observed expects 'chunk:fps,...', got {item!r}") from None
    return rows


def cmd_sim_fit_latency(args) -> int:
    rows = _parse_rows(args.observed) if args.observed else list(OBSERVED_FPS_ROWS)
    fit = fit_latency_model(rows)
    doc = {"header": _header(args), "fit": fit.to_dict()}
    _write_json(args.output, doc)
    return EXIT_OK


# ----------------------------------------------------------------- parser


def _common(p):
    p.add_argument("--config", help="TOML file; flags override its values")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes (never changes output bytes)")
    p.add_argument("-v", "--verbose", action="store_true")


def _quant_flags(p):
    p.add_argument("--mu", type=float, default=10.0)
    p.add_argument("--max-delta", type=float, default=10.0, help="camera clamp bound in degrees")
    p.add_argument("--bins", type=int, default=21)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="craftvla", description=__doc__.splitlines()[0])
    parser.add_argument(
        "--version", action="version",
        version=f"craftvla {__version__} (formats: " + ", ".join(f"{k} v{v}" for k, v in FORMAT_VERSIONS.items()) + ")",
    )
    groups = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    groups.required = True

    def leaf(group, name, func, help):
        p = group.add_parser(name, help=help)
        _common(p)
        p.set_defaults(func=func, leaf=p)
        return p

    codec = groups.add_parser("codec", help="action <-> token strings").add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    codec.required = True
    p = leaf(codec, "encode", cmd_codec_encode, "JSONL events -> token frames, one per line")
    p.add_argument("--input", default="-")
    p.add_argument("--output", default="-")
    _quant_flags(p)
    p = leaf(codec, "decode", cmd_codec_decode, "token frames -> JSONL events")
    p.add_argument("--input", default="-")
    p.add_argument("--output", default="-")
    _quant_flags(p)

    vocab = groups.add_parser("vocab", help="action-token vocabulary files").add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    vocab.required = True
    p = leaf(vocab, "build", cmd_vocab_build, "bind action tokens to base-tokenizer ids")
    p.add_argument("--stats", help="JSON base-vocabulary frequency table")
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default="repurpose")
    p.add_argument("--base-vocab-size", type=int)
    p.add_argument("--output", required=True)
    p = leaf(vocab, "inspect", cmd_vocab_inspect, "summarize a vocabulary file")
    p.add_argument("--vocab", required=True)
    p.add_argument("--output", default="-")
    _quant_flags(p)

    dataset = groups.add_parser("dataset", help="packed training datasets").add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    dataset.required = True
    p = leaf(dataset, "pack", cmd_dataset_pack, "trajectories or samples -> packed JSONL")
    p.add_argument("--trajectories")
    p.add_argument("--samples")
    p.add_argument("--vocab")
    p.add_argument("--output", required=True)
    p.add_argument("--phase", choices=["post_train", "fine_tune"], default="post_train")
    p.add_argument("--chunk", type=int, help="chunk size; overrides --phase")
    p.add_argument("--stride", type=int)
    p.add_argument("--history", type=int, default=2)
    p.add_argument("--vocab-size", type=int, help="declared id range of the packed file")
    _quant_flags(p)
    p = leaf(dataset, "unpack", cmd_dataset_unpack, "packed JSONL -> sample JSONL")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p = leaf(dataset, "stats", cmd_dataset_stats, "token and supervision counts")
    p.add_argument("--input", required=True)
    p.add_argument("--output", default="-")

    augment = groups.add_parser("augment", help="annotation-aware augmentation").add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    augment.required = True
    p = leaf(augment, "plan", cmd_augment_plan, "emit transformed annotations")
    p.add_argument("--annotations", required=True)
    p.add_argument("--spec", help="TOML with [affine] / [photometric] tables; random sampling if omitted")
    p.add_argument("--phase", choices=["vision_language", "action"], default="vision_language")
    p.add_argument("--out-size", type=int, nargs=2, metavar=("W", "H"))
    p.add_argument("--output", default="-")

    ground = groups.add_parser("ground", help="grounding evaluation").add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    ground.required = True
    p = leaf(ground, "score", cmd_ground_score, "rule-based grounding accuracy")
    p.add_argument("--cases", required=True)
    p.add_argument("--threshold", type=float, default=25.0)
    p.add_argument("--bbox-mode", choices=["center", "iou"], default="center")
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--output", default="-")

    judge = groups.add_parser("judge", help="LLM-as-judge QA evaluation").add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    judge.required = True
    p = leaf(judge, "run", cmd_judge_run, "grade a benchmark file")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--output", default="-")
    p.add_argument("--journal", help="append-only JSONL of verdicts; enables resume")
    p.add_argument("--base-url", default=os.environ.get("JUDGE_BASE_URL"))
    p.add_argument("--api-key", help=f"defaults to ${SECRET_ENV}")
    p.add_argument("--model", default="gpt-4o")
    p.add_argument("--stub", choices=["correct", "incorrect", "match"], help="offline deterministic judge")
    p.add_argument("--concurrency", type=int, default=4)
    p.add_argument("--max-retries", type=int, default=3)
    p.add_argument("--backoff", type=float, default=1.0)

    sim = groups.add_parser("sim", help="mock rollouts and latency model").add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    sim.required = True
    p = leaf(sim, "run", cmd_sim_run, "run a task suite in the mock environment")
    p.add_argument("--tasks", required=True)
    p.add_argument("--episodes", type=int, default=30)
    p.add_argument("--chunk", type=int)
    p.add_argument("--policy", choices=sorted(POLICIES), default="replay")
    p.add_argument("--allow-large-chunks", action="store_true")
    p.add_argument("--output", default="-")
    p.add_argument("--episodes-out")
    p = leaf(sim, "fit-latency", cmd_sim_fit_latency, "fit (L_d, L_e) to (chunk, fps) rows")
    p.add_argument("--observed", help="e.g. '1:8,2:15,3:21' (the default)")
    p.add_argument("--output", default="-")
    return parser


def _interpolate(value):
    if isinstance(value, str) and value == "${" + SECRET_ENV + "}":
        return os.environ.get(SECRET_ENV, "")
    return value


def _config_defaults(args) -> dict:
    doc = tomllib.loads(Path(args.config).read_text(encoding="utf-8"))
    values = {k: v for k, v in doc.items() if not isinstance(v, dict)}
    section = doc.get(args.command, {})
    values.update({k: v for k, v in section.items() if not isinstance(v, dict)})
    values.update(section.get(args.action, {}) if isinstance(section.get(args.action), dict) else {})
    known = {a.dest for a in args.leaf._actions}
    out = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("config", "help"):
            raise UsageError(f"unknown config key {key!r} for {args.command} {args.action}")
        out[dest] = _interpolate(value)
    return out


def _parse(parser, argv):
    args, extra = parser.parse_known_args(argv)
    if extra:
        flags = sorted(o for a in args.leaf._actions for o in a.option_strings)
        raise UsageError(f"unrecognized arguments: {' '.join(extra)}; valid flags: {', '.join(flags)}")
    return args


def dispatch(argv=None, env=None) -> int:
    if env is not None:
        os.environ.update(env)
    parser = build_parser()
    try:
        args = _parse(parser, argv)
        if args.config:
            if not Path(args.config).is_file():
                raise UsageError(f"config file not found: {args.config}")
            args.leaf.set_defaults(**_config_defaults(args))
            args = _parse(parser, argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr, format="%(levelname)s %(message)s"
        )
        for dest in ("input", "trajectories", "samples", "vocab", "stats", "annotations", "spec", "cases", "benchmark", "tasks"):
            path = getattr(args, dest, None)
            if path and path != "-" and not Path(path).is_file():
                raise UsageError(f"--{dest.replace('_', '-')}: no such file: {path}")
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except JudgeEndpointError as exc:
        print(f"endpoint error: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT
    except (CraftVLAError, ValueError, OSError, tomllib.TOMLDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
