from .config import RunConfig, config_from_dict, load_config, load_resources, validate
from .data import TASKS, DatasetItem, IngestResult, dump_items, ingest
from .prompts import TEMPLATES, render_prompt
from .sweep import Report, SweepResult, build_report, read_journal, report_from_journal, run_sweep

__all__ = [
    "TASKS",
    "TEMPLATES",
    "DatasetItem",
    "IngestResult",
    "Report",
    "RunConfig",
    "SweepResult",
    "build_report",
    "config_from_dict",
    "dump_items",
    "ingest",
    "load_config",
    "load_resources",
    "read_journal",
    "render_prompt",
    "report_from_journal",
    "run_sweep",
    "validate",
]
