"""Conditioning operators on grids: exact discrete conditioning, stability
audits, a KDE plug-in baseline and from-scratch neural operators."""

__version__ = "0.1.0"
