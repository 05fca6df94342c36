"""Numerical lab for multi-scale Green's-function analysis of quasi-periodic operators."""

from .kernels import BACKEND
from .lattice import SiteSet, box
from .model import HoppingSpec, ModelConfig, PotentialSpec, assemble_H, assemble_T
from .opalgebra import LatticeOperator, invert, schur, sobolev_norm

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "HoppingSpec", "LatticeOperator", "ModelConfig", "PotentialSpec", "SiteSet",
    "assemble_H", "assemble_T", "box", "invert", "schur", "sobolev_norm",
]
