"""Evaluation, persistence, rendering, the wire server and the command line."""
