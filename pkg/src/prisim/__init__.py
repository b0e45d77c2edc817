"""Deterministic simulator of a two-world priority construction.

The package builds recursively enumerable candidate sets against adversarial
environments on an infinite strategy tree, with runtime monitors asserting
the per-stage safety conditions of every strategy kind.
"""

__version__ = "0.1.0"
