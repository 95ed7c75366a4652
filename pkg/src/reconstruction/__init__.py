"""
Reference models for inference-aware state reconstruction.
"""

__version__ = "1.0.0"
