"""Team formation with submodular production: equilibrium, oracles, certificates."""
__version__ = "0.1.0"
