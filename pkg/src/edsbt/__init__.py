"""Workbench for hyperbolic Monge-Ampere exterior differential systems and
Backlund transformations: symbolic representation, verification of the
defining conditions and invariants, and numeric solution generation."""

__version__ = "0.1.0"
