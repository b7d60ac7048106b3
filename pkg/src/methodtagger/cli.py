"""Command-line entry point: ``methodtagger <command> ...``.

Every command writes its resolved configuration and a manifest next to its
outputs.  Manifests hold sha256 digests of inputs and outputs (by file name,
never absolute path) and no timestamps, so identical reruns give identical
bytes.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

from .chrono import FeedbackConfig, run_protocol, write_run
from .corpus import (BuildStats, Corpus, SectionFilter, build_corpus, chronological_split,
                     percentage_split, read_dataset, read_papers, read_tag_index,
                     tag_index_from_sentences, write_dataset, write_tag_index)
from .evaluate import (DegenerateVariance, EvalReport, context_frequencies,
                       evaluate_sentences, paired_t_test, per_paper_f, write_frequencies,
                       zero_shot_report)
from .factored import KINDS, load_tagger, train_tagger
from .training import ModelSpec, TrainConfig

logger = logging.getLogger("methodtagger")

_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
_MODEL_KEYS = {f.name for f in fields(ModelSpec)}
_FEEDBACK_KEYS = {f.name for f in fields(FeedbackConfig)}


class CliError(Exception):
    pass


# --------------------------------------------------------------------------
# config and manifests


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path, overrides, allowed: set) -> dict:
    """Flat JSON config plus ``key=value`` overrides; unknown keys are an error."""
    cfg = {}
    if path:
        try:
            cfg = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise CliError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise CliError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise CliError("config must be a JSON object")
    for item in overrides or ():
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg[key.strip()] = _parse_value(value)
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise CliError(f"unknown config keys: {', '.join(unknown)}")
    return cfg


def _split_config(cfg: dict):
    train = TrainConfig.from_dict({k: v for k, v in cfg.items() if k in _TRAIN_KEYS})
    spec = ModelSpec.from_dict({k: v for k, v in cfg.items() if k in _MODEL_KEYS})
    feedback = FeedbackConfig(**{k: v for k, v in cfg.items() if k in _FEEDBACK_KEYS})
    return train, spec, feedback


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    if path.is_dir():
        for f in sorted(p for p in path.rglob("*") if p.is_file()):
            h.update(f.relative_to(path).as_posix().encode("utf-8"))
            h.update(b"\0")
            h.update(f.read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def _files(paths: dict) -> dict:
    return {name: {"file": Path(p).name, "sha256": _digest(Path(p))}
            for name, p in sorted(paths.items())}


def _dump(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
                          encoding="utf-8")


def write_manifest(path, command: str, config: dict, inputs: dict, outputs: dict,
                   extra: dict | None = None) -> None:
    manifest = {"command": command, "config": config, "inputs": _files(inputs),
                "outputs": _files(outputs)}
    if extra:
        manifest.update(extra)
    _dump(manifest, path)


def _beside(path: Path, suffix: str) -> Path:
    return path.with_name(path.name + suffix)


def _read_dataset(path) -> list:
    try:
        return read_dataset(path)
    except OSError as exc:
        raise CliError(f"cannot read dataset {path}: {exc}") from None


def _tag_index_for(args, sentences) -> dict:
    if getattr(args, "tag_index", None):
        try:
            return read_tag_index(args.tag_index)
        except OSError as exc:
            raise CliError(f"cannot read tag index {args.tag_index}: {exc}") from None
    return tag_index_from_sentences(sentences)


# --------------------------------------------------------------------------
# commands


def cmd_build_corpus(args) -> int:
    src, out = Path(args.input), Path(args.output)
    if not src.is_file():
        raise CliError(f"cannot read input {src}")
    keep = SectionFilter()
    if args.keep:
        keep = SectionFilter(keep=tuple(s.strip().lower() for s in args.keep.split(",")),
                             exclude=keep.exclude)
    if args.exclude:
        keep = SectionFilter(keep=keep.keep,
                             exclude=tuple(s.strip().lower() for s in args.exclude.split(",")))
    config = {"negative_rate": args.negative_rate, "seed": args.seed,
              "keep": list(keep.keep), "exclude": list(keep.exclude)}
    stats = BuildStats()
    corpus, stats = build_corpus(read_papers(src, stats), keep, args.negative_rate,
                                 args.seed, stats)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(corpus.sentences, out)
    tags = _beside(out, ".tags.json")
    write_tag_index(corpus.tag_index, tags)
    _dump(config, _beside(out, ".config.json"))
    write_manifest(_beside(out, ".manifest.json"), "build-corpus", config, {"input": src},
                   {"dataset": out, "tag_index": tags}, {"stats": stats.as_dict()})
    print(f"papers read {stats.papers_read}, kept {stats.papers_kept}, "
          f"dropped without tags {stats.dropped_no_tags}, malformed lines {stats.malformed_lines}")
    print(f"sentences {stats.sentences}, spans {stats.spans}")
    return 0


def cmd_split(args) -> int:
    sentences = _read_dataset(args.dataset)
    corpus = Corpus(sentences)
    if (args.cutoff is None) == (args.ratio is None):
        raise CliError("give exactly one of --cutoff or --ratio")
    if args.cutoff is not None:
        train, test = chronological_split(corpus, args.cutoff)
        config = {"cutoff": args.cutoff}
    else:
        try:
            train, test = percentage_split(corpus, args.ratio, args.seed)
        except ValueError as exc:
            raise CliError(str(exc)) from None
        config = {"ratio": args.ratio, "seed": args.seed}
    train_out, test_out = Path(args.train_out), Path(args.test_out)
    for p in (train_out, test_out):
        p.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(train.sentences, train_out)
    write_dataset(test.sentences, test_out)
    _dump(config, _beside(train_out, ".config.json"))
    write_manifest(_beside(train_out, ".manifest.json"), "split", config,
                   {"dataset": args.dataset}, {"train": train_out, "test": test_out},
                   {"counts": {"train": len(train), "test": len(test)}})
    print(f"train {len(train)} sentences, test {len(test)} sentences")
    return 0


def _kind_config(args, extra_keys=()) -> dict:
    allowed = _TRAIN_KEYS | _MODEL_KEYS | {"kind"} | set(extra_keys)
    cfg = load_config(args.config, args.set, allowed)
    if args.kind:
        cfg["kind"] = args.kind
    if args.decoder:
        cfg["decoder"] = args.decoder
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg.setdefault("kind", "lfgb")
    if cfg["kind"] not in KINDS:
        raise CliError(f"unknown model kind {cfg['kind']!r}; choose from {', '.join(KINDS)}")
    return cfg


def _resolved(cfg: dict, train: TrainConfig, spec: ModelSpec, feedback=None) -> dict:
    out = {"kind": cfg["kind"], **asdict(train), **asdict(spec)}
    if feedback is not None:
        out.update(asdict(feedback))
    return out


def cmd_train(args) -> int:
    cfg = _kind_config(args)
    try:
        train, spec, _ = _split_config(cfg)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid configuration: {exc}") from None
    sentences = _read_dataset(args.dataset)
    out = Path(args.out)
    tagger = train_tagger(cfg["kind"], sentences, spec, train, jobs=args.jobs)
    tagger.save(out)
    resolved = _resolved(cfg, train, spec)
    _dump(resolved, out / "config.json")
    write_manifest(out / "run-manifest.json", "train", resolved, {"dataset": args.dataset},
                   {"model": out / "manifest.json",
                    **{f.stem: f for f in sorted(out.glob("*.npz"))}})
    print(f"trained {cfg['kind']} ({spec.decoder}) on {len(sentences)} sentences -> {out}")
    return 0


def _load_model(path):
    try:
        return load_tagger(path)
    except OSError as exc:
        raise CliError(f"cannot load model {path}: {exc}") from None


def cmd_predict(args) -> int:
    tagger = _load_model(args.model)
    sentences = _read_dataset(args.dataset)
    predicted = [s.with_labels(tagger.predict(s)) for s in sentences]
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(predicted, out)
    write_manifest(_beside(out, ".manifest.json"), "predict", {},
                   {"model": args.model, "dataset": args.dataset}, {"predictions": out})
    print(f"tagged {len(predicted)} sentences -> {out}")
    return 0


def _aligned_labels(gold: list, path) -> list:
    pred = _read_dataset(path)
    if [s.tokens for s in pred] != [s.tokens for s in gold]:
        raise CliError(f"predictions in {path} do not align with the gold dataset")
    return [s.labels for s in pred]


def cmd_evaluate(args) -> int:
    gold = _read_dataset(args.dataset)
    if (args.model is None) == (args.predictions is None):
        raise CliError("give exactly one of --model or --predictions")
    if args.model is not None:
        tagger = _load_model(args.model)
        predicted = [tagger.predict(s) for s in gold]
        inputs = {"model": args.model, "dataset": args.dataset}
    else:
        predicted = _aligned_labels(gold, args.predictions)
        inputs = {"predictions": args.predictions, "dataset": args.dataset}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = {"per_category": args.per_category, "zero_shot_cutoff": args.zero_shot_cutoff,
              "compare": Path(args.compare).name if args.compare else None}

    reports = {"all": evaluate_sentences(gold, predicted)}
    if args.zero_shot_cutoff is not None:
        tag_index = _tag_index_for(args, gold)
        if args.tag_index:
            inputs["tag_index"] = args.tag_index
        reports["zero_shot"] = zero_shot_report(gold, predicted, tag_index, args.zero_shot_cutoff)
    if not args.per_category:
        reports = {k: EvalReport(r.overall) for k, r in reports.items()}

    outputs = {}
    summary = {}
    for name, rep in reports.items():
        (out / f"report-{name}.csv").write_text(rep.to_csv(), encoding="utf-8")
        outputs[f"report-{name}"] = out / f"report-{name}.csv"
        summary[name] = rep.as_dict()
        print(f"[{name}]")
        print(rep.table())
    if args.compare:
        other = _aligned_labels(gold, args.compare)
        inputs["compare"] = args.compare
        a, b = per_paper_f(gold, predicted), per_paper_f(gold, other)
        papers = sorted(a)
        try:
            t, significant = paired_t_test([a[p] for p in papers], [b[p] for p in papers])
            summary["t_test"] = {"t": t, "significant": significant, "pairs": len(papers)}
        except DegenerateVariance as exc:
            summary["t_test"] = {"error": str(exc), "pairs": len(papers)}
        except ValueError as exc:
            raise CliError(f"t-test: {exc}") from None
        print(f"paired t-test: {summary['t_test']}")
    _dump(summary, out / "report.json")
    outputs["report"] = out / "report.json"
    _dump(config, out / "config.json")
    write_manifest(out / "run-manifest.json", "evaluate", config, inputs, outputs)
    return 0


def _read_stream(stream_dir) -> dict:
    d = Path(stream_dir)
    if not d.is_dir():
        raise CliError(f"stream directory {d} not found")
    stream = {}
    for f in sorted(d.glob("*.tsv")):
        if not f.stem.isdigit():
            raise CliError(f"stream file {f.name} is not named <year>.tsv")
        stream[int(f.stem)] = _read_dataset(f)
    if not stream:
        raise CliError(f"no <year>.tsv files in {d}")
    return stream


def cmd_feedback(args) -> int:
    cfg = _kind_config(args, _FEEDBACK_KEYS)
    try:
        train, spec, feedback = _split_config(cfg)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid configuration: {exc}") from None
    initial = _read_dataset(args.train)
    stream = _read_stream(args.stream)
    tag_index = _tag_index_for(args, initial + [s for y in sorted(stream) for s in stream[y]])
    cutoff = args.cutoff if args.cutoff is not None else max(s.paper_year for s in initial)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run = run_protocol(initial, stream, args.mode, train, feedback, cfg["kind"], spec,
                       tag_index, cutoff)
    resolved = {**_resolved(cfg, train, spec, feedback), "mode": args.mode, "cutoff": cutoff}
    _dump(resolved, out / f"config-{args.mode}.json")
    write_run(run, out, train, feedback, cfg["kind"], spec)
    inputs = {"train": args.train, **{f"stream-{y}": Path(args.stream) / f"{y}.tsv" for y in stream}}
    if args.tag_index:
        inputs["tag_index"] = args.tag_index
    write_manifest(out / f"run-manifest-{args.mode}.json", "feedback", resolved, inputs,
                   {"manifest": out / f"manifest-{args.mode}.json",
                    "series": out / f"series-{args.mode}.csv"})
    print(run.series_csv(), end="")
    return 0


def cmd_export_context(args) -> int:
    sentences = _read_dataset(args.dataset)
    labels_of = (lambda s: s.labels) if args.tagged_only else None
    try:
        counts = context_frequencies(sentences, args.target, args.window, labels_of=labels_of)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_frequencies(counts, out)
    config = {"target": args.target, "window": args.window, "tagged_only": args.tagged_only}
    write_manifest(_beside(out, ".manifest.json"), "export-context", config,
                   {"dataset": args.dataset}, {"frequencies": out})
    print(f"{len(counts)} context terms -> {out}")
    return 0


def cmd_synth(args) -> int:
    from .synthetic import drift_stream, separable_corpus, write_stream

    out = Path(args.out)
    if args.kind == "separable":
        corpus = separable_corpus(args.sentences, args.seed)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_dataset(corpus.sentences, out)
        write_tag_index(corpus.tag_index, _beside(out, ".tags.json"))
        outputs = {"dataset": out}
        manifest = _beside(out, ".manifest.json")
    else:
        write_stream(drift_stream(seed=args.seed), out)
        outputs = {"train": out / "train.tsv", "stream": out / "stream",
                   "tag_index": out / "tag_index.json"}
        manifest = out / "run-manifest.json"
    write_manifest(manifest, "synth", {"kind": args.kind, "seed": args.seed,
                                       "sentences": args.sentences}, {}, outputs)
    print(f"wrote synthetic {args.kind} data -> {out}")
    return 0


# --------------------------------------------------------------------------
# parser


def _add_model_options(p) -> None:
    p.add_argument("--kind", choices=KINDS, help="model family (default lfgb)")
    p.add_argument("--decoder", choices=("crf", "softmax"))
    p.add_argument("--config", help="JSON object of configuration keys")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="methodtagger",
                                     description="Method-name tagging with factored CRF models.")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--jobs", type=int, default=1, help="maximum worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-corpus", help="weakly label papers into a column dataset")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--negative-rate", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--keep", help="comma-separated section phrases to keep")
    p.add_argument("--exclude", help="comma-separated section phrases to drop")
    p.set_defaults(func=cmd_build_corpus)

    p = sub.add_parser("split", help="chronological or percentage split")
    p.add_argument("dataset")
    p.add_argument("--cutoff", type=int)
    p.add_argument("--ratio", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a tagger")
    p.add_argument("dataset")
    p.add_argument("--out", required=True)
    _add_model_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="tag a dataset with a trained model")
    p.add_argument("model")
    p.add_argument("dataset")
    p.add_argument("output")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="span-level evaluation")
    p.add_argument("dataset")
    p.add_argument("--model")
    p.add_argument("--predictions")
    p.add_argument("--out", required=True)
    p.add_argument("--per-category", action="store_true")
    p.add_argument("--zero-shot-cutoff", type=int)
    p.add_argument("--tag-index")
    p.add_argument("--compare", help="second prediction file for a paired t-test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("feedback", help="chronological frozen/silver/gold protocol")
    p.add_argument("train")
    p.add_argument("stream", help="directory of <year>.tsv files")
    p.add_argument("--mode", choices=("frozen", "silver", "gold"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cutoff", type=int)
    p.add_argument("--tag-index")
    _add_model_options(p)
    p.set_defaults(func=cmd_feedback)

    p = sub.add_parser("export-context", help="context-term frequencies around a surface")
    p.add_argument("dataset")
    p.add_argument("output")
    p.add_argument("--target", required=True)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--tagged-only", action="store_true")
    p.set_defaults(func=cmd_export_context)

    p = sub.add_parser("synth", help="write the seeded synthetic fixtures")
    p.add_argument("kind", choices=("separable", "drift"))
    p.add_argument("out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sentences", type=int, default=200)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001  surfaced as a one-line message
        logger.debug("command failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
