"""Python bindings for the video quality assessment pipeline core."""

from lmmvqa._core import (
    PipelineError,
    bucket_levels,
    build_qa_pairs,
    chunk_video,
    encode_features,
    generate_templates,
    parse_answer,
    plcc,
    srcc,
    write_synthetic_corpus,
)

__all__ = [
    "PipelineError",
    "bucket_levels",
    "build_qa_pairs",
    "chunk_video",
    "encode_features",
    "generate_templates",
    "parse_answer",
    "plcc",
    "srcc",
    "write_synthetic_corpus",
]
