"""Recurrent language models trained with negative sampling (PMI-LM) or NCE."""

__version__ = "0.1.0"
