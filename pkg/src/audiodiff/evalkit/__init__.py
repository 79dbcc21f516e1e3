"""Decoding, caption metrics and the difference probe."""
from .decode import DecodingConfig, Hypothesis, beam_decode, decode, greedy_decode, greedy_decode_batch
from .metrics import bleu_n, cider_d, cider_d_items, mentions, rouge_l, token_accuracy
from .probe import CASES, MetricReport, ProbeReport, difference_probe, evaluate, score

__all__ = [
    "DecodingConfig",
    "Hypothesis",
    "beam_decode",
    "decode",
    "greedy_decode",
    "greedy_decode_batch",
    "bleu_n",
    "cider_d",
    "cider_d_items",
    "mentions",
    "rouge_l",
    "token_accuracy",
    "CASES",
    "MetricReport",
    "ProbeReport",
    "difference_probe",
    "evaluate",
    "score",
]
