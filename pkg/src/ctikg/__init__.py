"""Desk-scale CTI generation, knowledge-graph, poisoning, and defense toolkit."""

__version__ = "0.1.0"
