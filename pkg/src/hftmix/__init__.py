"""Hierarchical minute-level trading agents: regime sub-agents mixed by a hyper-agent."""

__version__ = "0.1.0"
