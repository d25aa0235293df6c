"""Serialized output training for overlapped multi-talker recognition, at desk scale."""

__version__ = "0.1.0"
