"""Configuration files, trace I/O, result documents and the command line."""
from .cli import cli_dispatch, main
from .config import ConfigError, RunConfig, load_config
from .results import read_document, result_document, write_document
from .traces import TraceFormatError, emit_trace, ingest_trace

__all__ = [
    "ConfigError",
    "RunConfig",
    "TraceFormatError",
    "cli_dispatch",
    "emit_trace",
    "ingest_trace",
    "load_config",
    "main",
    "read_document",
    "result_document",
    "write_document",
]
