"""Reputation-balanced sharded ledger: deterministic simulator and security analyzer."""

__version__ = "0.1.0"
