"""Regenerate docs/config-reference.md from the config dataclasses."""

from pathlib import Path

from fedfusion.orchestrator.config import reference_markdown

if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "docs" / "config-reference.md"
    out.write_text(reference_markdown(), encoding="utf-8")
    print(f"wrote {out}")
