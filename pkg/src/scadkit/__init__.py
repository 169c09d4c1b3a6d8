"""Parse, segment, compile, render and mutate CSG scripts, and score reviews of them."""

from .csg import CompileError, DegenerateGeometry, PointCloud, compile_source, evaluate, normalize, sample_surface
from .dataset import build_dataset, build_sample, generate_synthetic_program, run_eval
from .metrics import MetricsReport, chamfer, jsd, mmd, rouge_l
from .mutate import ErrorRecord, ErrorType, mutate, visible_change
from .render import render, sample_views
from .review import FeedbackRecord, build_dpo_pairs
from .segment import annotate, segment, splice
from .syntax import parse, print_program

__version__ = "0.1.0"

__all__ = [
    "CompileError", "DegenerateGeometry", "ErrorRecord", "ErrorType", "FeedbackRecord", "MetricsReport",
    "PointCloud", "annotate", "build_dataset", "build_dpo_pairs", "build_sample", "chamfer", "compile_source",
    "evaluate", "generate_synthetic_program", "jsd", "mmd", "mutate", "normalize", "parse", "print_program",
    "render", "rouge_l", "run_eval", "sample_surface", "sample_views", "segment", "splice", "visible_change",
]
