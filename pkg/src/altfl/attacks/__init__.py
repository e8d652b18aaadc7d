"""Gradient inversion attacks against a single client update."""

from .active import imprint_model, install_trap_weights
from .common import (ACTIVE, ATTACKS, PASSIVE, AttackConfig, AttackOutcome, ObservedGradient,
                     infer_gradient, iip_score)
from .passive import dlg_attack, inverting_attack
from .trials import AttackEnv, cah_attack, rtf_attack, run_trial, success_rate, trial_plan

__all__ = [
    "ACTIVE", "ATTACKS", "PASSIVE", "AttackConfig", "AttackEnv", "AttackOutcome", "ObservedGradient",
    "cah_attack", "dlg_attack", "iip_score", "imprint_model", "infer_gradient", "install_trap_weights",
    "inverting_attack", "rtf_attack", "run_trial", "success_rate", "trial_plan",
]
