"""Range-penalised random walks: constants, samplers, bounds and shape diagnostics."""
__version__ = "0.1.0"
