"""Numerical lab for degenerate Kolmogorov-chain SDEs with rough drifts."""
from .chain_model import ChainSpec, build_model, holder_chain, linear_chain, peano_chain, smooth_chain

__version__ = "0.1.0"

__all__ = ["ChainSpec", "build_model", "holder_chain", "linear_chain", "peano_chain", "smooth_chain", "__version__"]
