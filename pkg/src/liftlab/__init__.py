"""liftlab: test-time adaptation of short-context language models to long inputs.

A long input is sliced into overlapping windows and fine-tuned into a copy
of the model (one clipped AdamW step per epoch over the whole sample set),
optionally alongside synthesized QA pairs and a supervised pre-stage over a
corpus. The eval side compares truncated in-context prompting against the
adapted model under seven modes, and a timing bench fits time-vs-length
scaling for both routes.

Submodules are imported explicitly (`from liftlab import model`); nothing
heavy is pulled in at package import time.
"""

__version__ = "0.1.0"

__all__ = [
    "numcore",
    "model",
    "segmenter",
    "synth",
    "lift",
    "sft",
    "evalbench",
    "plots",
    "cli",
    "seeding",
]
