"""Rule-based stand-in for the LLM, used by ``--llm mock``.

It reads the same prompts the real model would get and answers with simple
deterministic rules: labelled lines ("Title: ...") become entities, duplicate
entities are joined, dates are pulled out with regular expressions. Good
enough to exercise the whole pipeline offline; not a metadata extractor.
"""

from __future__ import annotations

import calendar
import json
import re
from datetime import date
from pathlib import Path

from . import evaluation as ev
from . import extraction as ex
from .gateway import ChatRequest
from .linking import TASK_TEMPORAL
from .records import NOT_AVAILABLE, join_values


def _section(text: str, header: str) -> str:
    """Body of a ``-Header-`` section, up to the next blank-line-separated header."""
    start = text.find(header + "\n")
    if start < 0:
        return ""
    body = text[start + len(header) + 1 :]
    m = re.search(r"\n\n-[A-Z][A-Za-z ]*-\n", body)
    return body[: m.start()] if m else body


def _field_names(prompt: str) -> list[str]:
    names = []
    for line in _section(prompt, ex.H_FIELDS).splitlines():
        if line.startswith("- ") and ":" in line:
            names.append(line[2:].split(":", 1)[0].strip())
    return names


def _extract(prompt: str) -> str:
    names = sorted(_field_names(prompt), key=len, reverse=True)
    document = _section(prompt, ex.H_DOCUMENT)
    lines = []
    for line in document.splitlines():
        low = line.lower()
        for name in names:
            if low.startswith(name.lower()) and (len(line) == len(name) or not line[len(name)].isalnum()):
                value = line[len(name) :].strip(" :\t-|")
                if value:
                    lines.append(ex.format_entity(name, value))
                break
    return "\n".join(lines) if lines else ex.format_entity(names[-1] if names else "Title", NOT_AVAILABLE)


def _postprocess(prompt: str) -> str:
    names = _field_names(prompt)
    grouped: dict[str, list[str]] = {n: [] for n in names}
    for line in _section(prompt, ex.H_ENTITIES).splitlines():
        m = ex._TUPLE_LINE.match(line.strip())
        if m and "|" in m.group("rest"):
            name, value = (p.strip() for p in m.group("rest").split("|", 1))
            if name in grouped:
                grouped[name].append(value)
    return "\n".join(ex.format_entity(n, join_values(v)) for n, v in grouped.items())


def _claims(prompt: str) -> str:
    text = _section(prompt, "-Text-")
    parts = re.split(r"(?<=[.!?;])\s+|\n+", text)
    return "\n".join(p.strip() for p in parts if ev.tokenize(p))


def _verdicts(prompt: str) -> str:
    doc_tokens = set(ev.tokenize(_section(prompt, "-Document-")))
    out = []
    for line in _section(prompt, "-Claims-").splitlines():
        m = re.match(r"(\d+)\.\s*(.*)", line)
        if not m:
            continue
        tokens = [t for t in ev.tokenize(m.group(2)) if len(t) > 2]
        ok = bool(tokens) and sum(t in doc_tokens for t in tokens) / len(tokens) >= 0.8
        out.append(f"{m.group(1)} | {'yes' if ok else 'no'}")
    return "\n".join(out)


def _questions(prompt: str) -> str:
    value = " ".join(_section(prompt, "-Answer-").split())
    n = int(m.group(1)) if (m := re.search(r"Write (\d+) different questions", prompt)) else ev.N_QUESTIONS
    stems = [
        "What is described by: {v}?",
        "Which dataset has this information: {v}?",
        "What does this dataset say about: {v}?",
        "What is known about the dataset regarding: {v}?",
    ]
    return "\n".join(stems[i % len(stems)].format(v=value) for i in range(n))


_MONTHS = {name.lower(): i for i, name in enumerate(calendar.month_name) if name}
_MONTHS.update({name.lower(): i for i, name in enumerate(calendar.month_abbr) if name})
_MONTH_RE = "|".join(sorted(_MONTHS, key=len, reverse=True))
_DATE_TOKEN = re.compile(
    rf"(?P<iso>(?P<iy>\d{{4}})-(?P<im>\d{{2}})-(?P<id>\d{{2}}))"
    rf"|(?P<mdy>(?P<m1>{_MONTH_RE})\.?\s+(?P<d1>\d{{1,2}})(?:st|nd|rd|th)?,?\s+(?P<y1>\d{{4}}))"
    rf"|(?P<dmy>(?P<d2>\d{{1,2}})(?:st|nd|rd|th)?\s+(?P<m2>{_MONTH_RE})\.?,?\s+(?P<y2>\d{{4}}))"
    rf"|(?P<my>(?P<m3>{_MONTH_RE})\.?,?\s+(?P<y3>\d{{4}}))"
    rf"|(?P<year>(?<!\d)(?P<y4>\d{{4}})(?!\d))",
    re.IGNORECASE,
)


def heuristic_date_range(text: str) -> str:
    """Span of every date-like token in ``text`` as ``YYYY-MM-DD-YYYY-MM-DD``, or N/A."""
    spans: list[tuple[date, date]] = []
    for m in _DATE_TOKEN.finditer(text):
        try:
            if m.group("iso"):
                d = date(int(m.group("iy")), int(m.group("im")), int(m.group("id")))
                spans.append((d, d))
            elif m.group("mdy") or m.group("dmy"):
                y = int(m.group("y1") or m.group("y2"))
                mo = _MONTHS[(m.group("m1") or m.group("m2")).lower()]
                d = date(y, mo, int(m.group("d1") or m.group("d2")))
                spans.append((d, d))
            elif m.group("my"):
                y, mo = int(m.group("y3")), _MONTHS[m.group("m3").lower()]
                spans.append((date(y, mo, 1), date(y, mo, calendar.monthrange(y, mo)[1])))
            else:
                y = int(m.group("y4"))
                spans.append((date(y, 1, 1), date(y, 12, 31)))
        except ValueError:
            continue
    if not spans:
        return NOT_AVAILABLE
    start = min(s for s, _ in spans)
    end = max(e for _, e in spans)
    return f"{start.isoformat()}-{end.isoformat()}"


def _temporal(prompt: str) -> str:
    return heuristic_date_range(_section(prompt, "-Temporal coverage-"))


_HANDLERS = {
    ex.TASK_EXTRACT: _extract,
    ex.TASK_POSTPROCESS: _postprocess,
    ev.TASK_CLAIMS: _claims,
    ev.TASK_VERDICTS: _verdicts,
    ev.TASK_QUESTIONS: _questions,
    TASK_TEMPORAL: _temporal,
}


class HeuristicResponder:
    def __call__(self, req: ChatRequest) -> str:
        # the retry turn of temporal normalization repeats the original prompt first
        prompt = req.messages[-1][1] if req.task != TASK_TEMPORAL else req.messages[0][1]
        handler = _HANDLERS.get(req.task)
        if handler is None:
            raise ValueError(f"heuristic mock cannot answer task {req.task!r}")
        return handler(prompt)


def load_mock_table(path: str | Path) -> dict[str, str]:
    """Canned responses file: a JSON object mapping prompt hash -> response text."""
    table = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(table, dict) or not all(isinstance(v, str) for v in table.values()):
        raise ValueError(f"{path}: expected an object of prompt-hash -> response text")
    return table

