"""Span-based neural constituency parser and analysis toolkit."""

__version__ = "0.1.0"
