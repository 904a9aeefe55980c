from ._core import (
    Error,
    LabelSchema,
    Model,
    Sample,
    cli,
    evaluate,
    extract_code_section,
    kfold_split,
    load_checkpoint,
    read_corpus,
    regime_ledger,
    synth_corpus,
    train,
    write_corpus,
)

__all__ = [
    "Error",
    "LabelSchema",
    "Model",
    "Sample",
    "cli",
    "evaluate",
    "extract_code_section",
    "kfold_split",
    "load_checkpoint",
    "read_corpus",
    "regime_ledger",
    "synth_corpus",
    "train",
    "write_corpus",
]
