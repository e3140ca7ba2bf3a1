"""Failure-recovery command estimation from log template ID sequences."""

from ._core import (
    Corpus,
    GenParams,
    Hyperparams,
    MaskRuleSet,
    SamplePair,
    ScoredHypothesis,
    Seq2SeqModel,
    TemplateStore,
    apply_profile,
    encode_log,
    gen_corpus,
    mask_line,
    parse_command_lines,
    reliability,
    run,
    simulate_commands,
    threshold_report,
    train_model,
    write_corpus,
)

__all__ = [
    "Corpus",
    "GenParams",
    "Hyperparams",
    "MaskRuleSet",
    "SamplePair",
    "ScoredHypothesis",
    "Seq2SeqModel",
    "TemplateStore",
    "apply_profile",
    "encode_log",
    "gen_corpus",
    "mask_line",
    "parse_command_lines",
    "reliability",
    "run",
    "simulate_commands",
    "threshold_report",
    "train_model",
    "write_corpus",
]
