"""Prompt templates live as plain text files so they stay auditable.

Defaults ship inside the package; a config-supplied directory overrides any
of them file by file. A trailing newline in the file is not part of the
template.
"""

from importlib import resources
from pathlib import Path
from typing import Optional

PROMPT_NAMES = ("segment", "merge", "confidence", "judge")


def load_prompt(name: str, prompts_dir: Optional[str] = None) -> str:
    if name not in PROMPT_NAMES:
        raise ValueError(f"unknown prompt {name!r}; expected one of {PROMPT_NAMES}")
    if prompts_dir is not None:
        override = Path(prompts_dir) / f"{name}.txt"
        if override.is_file():
            return override.read_text(encoding="utf-8").rstrip("\n")
    packaged = resources.files(__package__) / "prompts" / f"{name}.txt"
    return packaged.read_text(encoding="utf-8").rstrip("\n")
