"""Factored CRF taggers for methodology names, with chronological evaluation."""
from .corpus import Corpus, LabeledSentence, RawPaper, build_corpus, weak_label
from .crf import TransitionMatrix, bio_mask, log_partition, viterbi
from .evaluate import EvalReport, evaluate_sentences, span_prf, zero_shot_report
from .factored import load_tagger, train_dfg, train_lfg, train_plain, train_tagger
from .labels import LabelScheme, expand_labels, project_labels
from .training import ModelSpec, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Corpus", "EvalReport", "LabelScheme", "LabeledSentence", "ModelSpec", "RawPaper",
    "TrainConfig", "TransitionMatrix", "bio_mask", "build_corpus", "evaluate_sentences",
    "expand_labels", "load_tagger", "log_partition", "project_labels", "span_prf",
    "train", "train_dfg", "train_lfg", "train_plain", "train_tagger", "viterbi",
    "weak_label", "zero_shot_report",
]
