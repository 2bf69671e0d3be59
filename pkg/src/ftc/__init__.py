"""Follow-the-clairvoyant controller synthesis for finite-horizon LTV systems."""

from ftc.lifted import (
    CostWeights,
    LiftedOperators,
    LtvSystem,
    build_lifted,
    rollout,
)
from ftc.clairvoyant import (
    NoncausalResponse,
    clairvoyant_cost,
    constrained_h2,
    unconstrained_optimal,
)
from ftc.synthesis import (
    CausalResponse,
    SafetySpec,
    SynthesisResult,
    certify_safety,
    reconstruct_feedback,
    synthesize_ftc,
    synthesize_h2,
    synthesize_hinf,
    synthesize_regret,
)

__all__ = [
    "CausalResponse",
    "CostWeights",
    "LiftedOperators",
    "LtvSystem",
    "NoncausalResponse",
    "SafetySpec",
    "SynthesisResult",
    "build_lifted",
    "certify_safety",
    "clairvoyant_cost",
    "constrained_h2",
    "reconstruct_feedback",
    "rollout",
    "synthesize_ftc",
    "synthesize_h2",
    "synthesize_hinf",
    "synthesize_regret",
    "unconstrained_optimal",
]
