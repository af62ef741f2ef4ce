from __future__ import annotations

import re
from collections.abc import Sequence


# Target headers match anywhere in any case; any other all-caps "WORDS:" ends a section only at a line start.
_HEADER = re.compile(
    r"(?<![A-Za-z])(?P<target>(?i:findings|impressions?))\s*:"
    r"|^[ \t]*(?!(?i:findings|impressions?)\s*:)(?P<other>[A-Z][A-Z /&()-]*[A-Z])[ \t]*:",
    re.MULTILINE,
)


def _clean(text: str) -> str:
    return " ".join(text.split())


def extract_report_sections(text: str) -> str:
    """Findings and impression of a radiology report joined by a newline.

    A section runs from its header to the next header or end of text. A
    missing section contributes an empty string; repeated sections are
    joined with a space.
    """
    headers = list(_HEADER.finditer(text or ""))
    findings: list[str] = []
    impressions: list[str] = []
    for index, match in enumerate(headers):
        label = match.group("target")
        if label is None:
            continue
        end = headers[index + 1].start() if index + 1 < len(headers) else len(text)
        body = _clean(text[match.end() : end])
        if not body:
            continue
        (findings if label.lower() == "findings" else impressions).append(body)
    return f"{' '.join(findings)}\n{' '.join(impressions)}".strip()


def render_labels(labels: Sequence[str]) -> str:
    """Label list as conditioning text, e.g. ``labels: effusion, cardiomegaly``."""
    cleaned = [_clean(label).lower() for label in labels if _clean(label)]
    return f"labels: {', '.join(cleaned)}" if cleaned else ""


def conditioning_text(report: str | None, labels: Sequence[str] | None) -> str:
    """Report sections when present, otherwise rendered labels, otherwise empty."""
    if report:
        sections = extract_report_sections(report)
        if sections:
            return sections
    if labels:
        return render_labels(labels)
    return ""
