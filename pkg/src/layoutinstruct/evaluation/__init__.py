"""Zero-shot evaluation: QA-for-VIE sets, prompts, adapters, ANLS and Rouge-L."""
from .harness import (
    EndpointAdapter,
    EvalItem,
    MissingPrediction,
    PredictionFileAdapter,
    ScoreReport,
    build_qa_for_vie_entities,
    build_qa_for_vie_linking,
    format_prompt,
    gold_echo,
    read_eval_set,
    score_run,
    write_eval_set,
    write_report,
)
from .metrics import anls, levenshtein, normalized_levenshtein, rouge_l

__all__ = [
    "EndpointAdapter", "EvalItem", "MissingPrediction", "PredictionFileAdapter", "ScoreReport",
    "build_qa_for_vie_entities", "build_qa_for_vie_linking", "format_prompt", "gold_echo",
    "read_eval_set", "score_run", "write_eval_set", "write_report",
    "anls", "levenshtein", "normalized_levenshtein", "rouge_l",
]
