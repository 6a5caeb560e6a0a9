"""Velocity-template action recognition and video retrieval."""
