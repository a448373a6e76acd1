"""Discrete auto-regressive biasing for controlled decoding."""
