"""Instruction templates per task."""
from __future__ import annotations

import re
from typing import Mapping, Optional

from .data import DatasetItem

TEMPLATES = {
    "qa": "# Question: {question}\n\n# Answer:",
    "ts": "Article: {text}\n\nSummarize the above article in 1 sentence.",
    "mt": "Translate the following sentence from German to English.\n{text}",
    "cg": "Please complete the remaining Python function code based on the following docstring content.\n{text}",
}

_PLACEHOLDER = re.compile(r"\{(?:question|text)\}")


def render_prompt(item: DatasetItem, task: Optional[str] = None, templates: Optional[Mapping[str, str]] = None) -> str:
    """Substitute the item text into its task template.

    Single-pass replacement of ``{question}``/``{text}``, so braces inside
    the item text (code, math) pass through untouched.
    """
    task = task or item.task
    table = {**TEMPLATES, **(templates or {})}
    if task not in table:
        raise ValueError(f"no prompt template registered for task {task!r}")
    return _PLACEHOLDER.sub(lambda _m: item.input, table[task])
