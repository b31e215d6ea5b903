"""Few-shot visual relation detection with knowledge fusion."""

from ._kfv import (
    ConfigError,
    ContractViolation,
    DivergenceError,
    KnowledgeGraph,
    Lexicon,
    ParseError,
    SyntheticDataset,
    SyntheticSpec,
    cli_main,
    generate_synthetic,
    knowledge_graph,
    ordered_pairs,
    parse_caption,
    parse_captions_jsonl,
    rank_from_scores,
    recall_at_k,
    run_experiment,
    sha256_hex,
    tokenize,
)

__all__ = [name for name in dir() if not name.startswith("_")]
