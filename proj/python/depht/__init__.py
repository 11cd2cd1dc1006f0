from ._depht import (
    CorpusIOError,
    FunqlError,
    Instance,
    MeaningRepresentation,
    Model,
    NoDerivation,
    SignatureTable,
    count_trees,
    evaluate,
    load_corpus,
    parse_mr,
    to_prolog,
)

__all__ = [
    "CorpusIOError",
    "FunqlError",
    "Instance",
    "MeaningRepresentation",
    "Model",
    "NoDerivation",
    "SignatureTable",
    "count_trees",
    "evaluate",
    "load_corpus",
    "parse_mr",
    "to_prolog",
]
