"""Lifespan laboratory for weakly coupled damped/undamped wave systems."""
from .model import (
    BoundKind, CaseTag, CharRoots, LifespanExponent, LossParameter, MassCase, SystemParams,
    char_roots, decay_factor, gn_theta, loss_parameter, lower_lifespan_exponent,
    massless_decay_rate, nakao_rn_blowup, upper_lifespan_exponent,
)

__all__ = [
    "BoundKind", "CaseTag", "CharRoots", "LifespanExponent", "LossParameter", "MassCase",
    "SystemParams", "char_roots", "decay_factor", "gn_theta", "loss_parameter",
    "lower_lifespan_exponent", "massless_decay_rate", "nakao_rn_blowup", "upper_lifespan_exponent",
]
