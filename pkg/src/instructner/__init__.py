"""Instruction-prefixed biomedical NER with dense knowledge-base entity samples."""

__version__ = "0.1.0"
