"""Python bindings for the asft core."""

from ._core import (
    AsftError,
    epl,
    evaluate,
    load_checkpoint,
    mix_poison_counts,
    penalty,
    project,
    run_cli,
    save_checkpoint,
)

__all__ = [
    "AsftError",
    "epl",
    "evaluate",
    "load_checkpoint",
    "mix_poison_counts",
    "penalty",
    "project",
    "run_cli",
    "save_checkpoint",
]
