"""Self-contained HTML rendering of local explanations.

Tokens are colored by their derived tag: dark green for a complete
giveaway, light green for a strong indication, red for an indication of
the opposite class.  A JSON sidecar next to the HTML file carries the raw
scores and tags for machine consumption.
"""

from __future__ import annotations

import html
import json
from pathlib import Path
from typing import Sequence

from .agreement import TokenTag, scores_to_tags
from .corpus import LabeledCase
from .explainers import LocalExplanation
from .text import normalize

_CSS = """
body { font-family: sans-serif; max-width: 60em; margin: 2em auto; }
article { border: 1px solid #ccc; border-radius: 4px; padding: 1em; margin: 1em 0; }
h2 { font-size: 1em; color: #333; }
.giveaway { background: #016904; color: white; }
.strong { background: #8ed973; }
.opposite { background: #f4a6a6; }
"""

_TAG_CLASS = {
    TokenTag.Giveaway: "giveaway",
    TokenTag.Strong: "strong",
    TokenTag.Opposite: "opposite",
}


def render_document(text: str, scores: Sequence[float]) -> str:
    """Render one document with highlighted token spans.

    Scores must align one-to-one with the document's normalized tokens;
    anything else means the explanation was built for different text.
    """
    seq = normalize(text)
    if len(scores) != len(seq.tokens):
        raise ValueError(
            f"{len(scores)} scores for {len(seq.tokens)} tokens; offsets misaligned"
        )
    tags = scores_to_tags(scores)
    parts: list[str] = []
    cursor = 0
    for (start, end), tag in zip(seq.offsets, tags):
        parts.append(html.escape(text[cursor:start]))
        chunk = html.escape(text[start:end])
        if tag in _TAG_CLASS:
            parts.append(f'<span class="{_TAG_CLASS[tag]}">{chunk}</span>')
        else:
            parts.append(chunk)
        cursor = end
    parts.append(html.escape(text[cursor:]))
    return "".join(parts)


def write_report(
    cases: Sequence[LabeledCase],
    explanations: Sequence[LocalExplanation],
    path,
) -> None:
    """Write a standalone HTML report plus a .json sidecar of raw scores."""
    by_doc = {case.document.id: case for case in cases}
    articles = []
    sidecar = []
    for explanation in explanations:
        case = by_doc.get(explanation.doc_id)
        if case is None:
            raise ValueError(f"explanation references unknown document '{explanation.doc_id}'")
        body = render_document(case.document.text, explanation.scores)
        articles.append(
            "<article>"
            f"<h2>{html.escape(explanation.doc_id)} "
            f"({html.escape(explanation.method)}, label {html.escape(case.label.value)})</h2>"
            f"<p>{body}</p>"
            "</article>"
        )
        sidecar.append({
            "doc_id": explanation.doc_id,
            "method": explanation.method,
            "scores": list(explanation.scores),
            "tags": [tag.name for tag in scores_to_tags(explanation.scores)],
        })
    document = (
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
        f"<title>Local explanations</title><style>{_CSS}</style></head>\n"
        "<body><h1>Local explanations</h1>\n"
        + "\n".join(articles)
        + "\n</body></html>\n"
    )
    path = Path(path)
    path.write_text(document, encoding="utf-8")
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, ensure_ascii=False, indent=1) + "\n", encoding="utf-8"
    )
