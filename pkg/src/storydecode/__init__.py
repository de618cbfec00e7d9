"""Decoding engine and evaluation harness for open-ended story generation."""

__version__ = "0.1.0"

SCHEMA_VERSION = 1
