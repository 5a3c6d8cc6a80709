"""Differentially private LoRA fine-tuning of a small byte-level decoder.

Records are dicts with string keys ``instruction``, ``input`` and ``output``
(one of ``negative``, ``neutral``, ``positive``). Run settings are the same
``key -> value`` strings accepted by the command-line config files.
"""

from ._dpfl import (
    Error,
    Model,
    build_base,
    calibrate_sigma,
    clip_gradient,
    default_delta,
    epsilon_spent,
    extract_label,
    load_model,
    noisy_aggregate,
    parse_jsonl,
    rdp_subsampled_gaussian,
    render_prompt,
    scores,
    synth_dataset,
    tokenize_example,
    train,
)

__all__ = [
    "Error",
    "Model",
    "build_base",
    "calibrate_sigma",
    "clip_gradient",
    "default_delta",
    "epsilon_spent",
    "extract_label",
    "load_model",
    "noisy_aggregate",
    "parse_jsonl",
    "rdp_subsampled_gaussian",
    "render_prompt",
    "scores",
    "synth_dataset",
    "tokenize_example",
    "train",
]
