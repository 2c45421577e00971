"""Pretrained-encoder feature extraction into ALNF v1 files."""

from .alnf import AlnfWriter
from .extract import ExtractionJob, ExtractionStats, extract

__version__ = "0.1.0"
