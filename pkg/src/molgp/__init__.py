"""Gaussian-process property prediction over SMILES strings and circular fingerprints."""

__version__ = "0.1.0"
