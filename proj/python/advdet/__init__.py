"""Adversarial example generation and detection on a small autodiff core."""

from ._core import (
    AttackConfig,
    DetectorBundle,
    Model,
    attack,
    attack_families,
    build_classifier,
    clip_linf,
    command_names,
    desk_classifier_spec,
    detect,
    git_describe,
    load_cifar,
    load_idx,
    project_l2_ball,
    rerun_manifest,
    run_command,
    synth_blobs,
    train_classifier,
)

__all__ = [
    "AttackConfig",
    "DetectorBundle",
    "Model",
    "attack",
    "attack_families",
    "build_classifier",
    "clip_linf",
    "command_names",
    "desk_classifier_spec",
    "detect",
    "git_describe",
    "load_cifar",
    "load_idx",
    "project_l2_ball",
    "rerun_manifest",
    "run_command",
    "synth_blobs",
    "train_classifier",
]
