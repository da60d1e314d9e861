from .analysis import (CheckpointObject, CheckpointSet, Definition, LocationSets, SourceInfo,
                       analyze, analyze_records, build_sets, dedupe, filter_varying,
                       match_locations)
from .report import render, render_text, render_tsv
from .trace import (Alloc, IterBegin, Location, LoopBegin, MissingLoopBegin, ParseError,
                    TraceRecord, mem, parse_line, parse_trace, reg, write_trace)

__all__ = [
    "CheckpointObject", "CheckpointSet", "Definition", "LocationSets", "SourceInfo",
    "analyze", "analyze_records", "build_sets", "dedupe", "filter_varying",
    "match_locations", "render", "render_text", "render_tsv", "Alloc", "IterBegin",
    "Location", "LoopBegin", "MissingLoopBegin", "ParseError", "TraceRecord", "mem",
    "parse_line", "parse_trace", "reg", "write_trace",
]
