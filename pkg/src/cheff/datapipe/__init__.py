from cheff.datapipe.images import read_pgm, standardize_image, write_pgm
from cheff.datapipe.index import IndexFile, SampleRecord, SourceConfig, build_index, read_index
from cheff.datapipe.reports import extract_report_sections
from cheff.datapipe.tokenizer import Vocabulary, build_vocabulary, tokenize

__all__ = [
    "IndexFile",
    "SampleRecord",
    "SourceConfig",
    "Vocabulary",
    "build_index",
    "build_vocabulary",
    "extract_report_sections",
    "read_index",
    "read_pgm",
    "standardize_image",
    "tokenize",
    "write_pgm",
]
