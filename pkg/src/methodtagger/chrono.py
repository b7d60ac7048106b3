"""Chronological train / predict / retrain protocol.

Starting from a model trained on gold data up to the cutoff year ``t``, each
stream year is tagged by the current model.  Depending on the mode the model
is then left alone (``frozen``), retrained on its own predictions
(``silver``) or retrained on the year's gold labels (``gold``), and every
checkpoint is scored on all later years.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .corpus import Corpus
from .evaluate import EvalReport, evaluate_sentences, zero_shot_report
from .factored import train_tagger
from .training import EmptyData, ModelSpec, TrainConfig

logger = logging.getLogger(__name__)

MODES = ("frozen", "silver", "gold")


class ProtocolError(RuntimeError):
    pass


@dataclass
class FeedbackConfig:
    retrain_epochs: int = 5
    mix_gold: bool = False               # replay the initial gold data during retraining
    min_path_prob: Optional[float] = None  # drop silver sentences below this Viterbi probability
    keep_negative: float = 1.0           # share of silver sentences without spans to keep


@dataclass
class FeedbackRun:
    mode: str
    cutoff: int
    checkpoints: dict = field(default_factory=dict)   # model year -> tagger
    reports: dict = field(default_factory=dict)       # (model year, eval year) -> {"all", "zero_shot"}
    silver_data: dict = field(default_factory=dict)   # year -> list of LabeledSentence

    def report(self, model_year: int, eval_year: int, subset: str = "all") -> EvalReport:
        return self.reports[(model_year, eval_year)][subset]

    def latest_before(self, eval_year: int) -> int:
        years = [y for y in self.checkpoints if y < eval_year]
        return max(years)

    def current(self, eval_year: int, subset: str = "all") -> EvalReport:
        """Score of the newest checkpoint available before ``eval_year``."""
        return self.report(self.latest_before(eval_year), eval_year, subset)

    def series_rows(self) -> list:
        rows = []
        for (my, ey), reps in sorted(self.reports.items()):
            for subset in ("all", "zero_shot"):
                r = reps[subset].overall
                rows.append({"mode": self.mode, "model_year": my, "eval_year": ey, "subset": subset,
                             "precision": round(r.precision, 6), "recall": round(r.recall, 6),
                             "f_score": round(r.f_score, 6), "tp": r.tp, "n_pred": r.n_pred,
                             "n_gold": r.n_gold})
        return rows

    def series_csv(self) -> str:
        buf = io.StringIO()
        cols = ["mode", "model_year", "eval_year", "subset", "precision", "recall", "f_score",
                "tp", "n_pred", "n_gold"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in self.series_rows():
            w.writerow(row)
        return buf.getvalue()


def tagger_confidence(tagger, sentence) -> float:
    """Viterbi path probability under the model that would tag ``sentence``."""
    if hasattr(tagger, "models"):
        from .factored import route
        model = tagger.models[route(sentence.category, tagger.routing)]
    else:
        model = tagger.model
    if model.decoder != "crf":
        return 1.0
    return model.path_probability(sentence.tokens, sentence.key)


def predict_year(tagger, sentences, keep_negative: float = 1.0,
                 min_path_prob: Optional[float] = None, seed: int = 0) -> list:
    """Silver copies of ``sentences`` with the model's predictions as labels."""
    rng = np.random.default_rng(seed)
    silver = []
    for sent in sentences:
        labels = tagger.predict(sent)
        if min_path_prob is not None and tagger_confidence(tagger, sent) < min_path_prob:
            continue
        if "B" not in labels and keep_negative < 1.0 and rng.random() >= keep_negative:
            continue
        silver.append(sent.with_labels(labels))
    return silver


def retrain(tagger, data, config: TrainConfig):
    """Continue training from the tagger's current parameters; returns a new tagger."""
    data = list(data.sentences if isinstance(data, Corpus) else data)
    if not data:
        raise EmptyData("nothing to retrain on")
    if config.max_epochs == 0:
        return tagger
    return tagger.retrain(data, config)


def evaluate_tagger(tagger, sentences, tag_index: dict, cutoff: int) -> dict:
    predicted = [tagger.predict(s) for s in sentences]
    return {"all": evaluate_sentences(sentences, predicted),
            "zero_shot": zero_shot_report(sentences, predicted, tag_index, cutoff)}


def run_protocol(initial, stream: dict, mode: str, config: TrainConfig,
                 feedback: FeedbackConfig = FeedbackConfig(), kind: str = "lfgb",
                 spec: ModelSpec = ModelSpec(), tag_index: dict | None = None,
                 cutoff: int | None = None, initial_tagger=None) -> FeedbackRun:
    """Run one mode of the protocol over the yearly ``stream``.

    ``initial_tagger`` skips the initial training (use it to share one
    ``M_t`` between the three modes).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    initial_sents = list(initial.sentences if isinstance(initial, Corpus) else initial)
    years = sorted(stream)
    if cutoff is None:
        cutoff = max(s.paper_year for s in initial_sents)
    if years and years[0] <= cutoff:
        raise ProtocolError(f"stream year {years[0]} does not follow the cutoff {cutoff}")
    if tag_index is None:
        tag_index = dict(getattr(initial, "tag_index", {}) or {})
    slices = {y: list(stream[y].sentences if isinstance(stream[y], Corpus) else stream[y])
              for y in years}

    run = FeedbackRun(mode, cutoff)
    tagger = initial_tagger
    if tagger is None:
        try:
            tagger = train_tagger(kind, initial_sents, spec, config)
        except Exception as exc:
            raise ProtocolError(f"initial training (<= {cutoff}) failed: {exc}") from exc
    run.checkpoints[cutoff] = tagger
    for y in years:
        run.reports[(cutoff, y)] = evaluate_tagger(tagger, slices[y], tag_index, cutoff)
    if mode == "frozen":
        return run

    retrain_cfg = config.replace(max_epochs=feedback.retrain_epochs)
    for i, y in enumerate(years[:-1]):
        # predictions for year y come from the checkpoint that has never seen y
        if mode == "silver":
            data = predict_year(tagger, slices[y], feedback.keep_negative,
                                feedback.min_path_prob, seed=config.seed + y)
            run.silver_data[y] = data
        else:
            data = slices[y]
        if feedback.mix_gold:
            data = initial_sents + list(data)
        try:
            tagger = retrain(tagger, data, retrain_cfg.replace(seed=config.seed + y))
        except Exception as exc:
            raise ProtocolError(f"retraining on year {y} failed: {exc}") from exc
        run.checkpoints[y] = tagger
        for later in years[i + 1:]:
            run.reports[(y, later)] = evaluate_tagger(tagger, slices[later], tag_index, cutoff)
    return run


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_run(run: FeedbackRun, out_dir, config: TrainConfig, feedback: FeedbackConfig,
              kind: str, spec: ModelSpec) -> dict:
    """Write checkpoints, the CSV series and a JSON manifest; returns the manifest."""
    out = Path(out_dir)
    ckpt_dir = out / "checkpoints" / run.mode
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    checkpoints = {}
    for year, tagger in sorted(run.checkpoints.items()):
        path = ckpt_dir / str(year)
        tagger.save(path)
        digest = hashlib.sha256()
        for f in sorted(path.iterdir()):
            digest.update(f.name.encode())
            digest.update(f.read_bytes())
        checkpoints[str(year)] = {"path": str(path.relative_to(out)), "sha256": digest.hexdigest()}
    series = run.series_csv()
    series_path = out / f"series-{run.mode}.csv"
    series_path.write_text(series, encoding="utf-8")
    manifest = {
        "mode": run.mode,
        "cutoff": run.cutoff,
        "kind": kind,
        "seed": config.seed,
        "train_config": asdict(config),
        "feedback_config": asdict(feedback),
        "model_spec": asdict(spec),
        "checkpoints": checkpoints,
        "silver_sentences": {str(y): len(v) for y, v in sorted(run.silver_data.items())},
        "metrics": [
            {**row} for row in run.series_rows()
        ],
        "series": {"path": series_path.name, "sha256": _sha256(series.encode("utf-8"))},
    }
    (out / f"manifest-{run.mode}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                                   encoding="utf-8")
    return manifest
