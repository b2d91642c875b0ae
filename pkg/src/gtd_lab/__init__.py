"""Membership-inference attacks and defenses for transductive node classification."""

__version__ = "0.1.0"
