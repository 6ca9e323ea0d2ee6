"""Incremental geometric multi-resolution analysis for streaming point clouds."""
from .covertree import CoverTree, check_invariants
from .gmra import GmraConfig, GmraNode, GmraTree, StaleTreeError, WaveletCoefficients

__version__ = "0.1.0"
