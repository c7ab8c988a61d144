"""Numerics for sublinear expectations and G-Brownian motion."""

from .params import GParams, MeanParams, GridSpec
from .sublinear_core import (
    ScenarioSpace,
    ProductSpace,
    RiskReport,
    evaluate,
    risk_measure,
    check_axioms,
    represent,
    product_space,
)

__version__ = "0.1.0"

__all__ = [
    "GParams",
    "MeanParams",
    "GridSpec",
    "ScenarioSpace",
    "ProductSpace",
    "RiskReport",
    "evaluate",
    "risk_measure",
    "check_axioms",
    "represent",
    "product_space",
]
