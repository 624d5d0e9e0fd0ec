"""Fetching landing pages and metadata files, and reducing them to prompt text."""

from __future__ import annotations

import logging
import mimetypes
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol
from urllib.parse import unquote, urlparse
from urllib.request import url2pathname

import requests
from bs4 import BeautifulSoup
from bs4.element import Comment, Declaration, Doctype, NavigableString, ProcessingInstruction, Tag
from lxml import etree

from .store import Store, content_key

logger = logging.getLogger(__name__)

DEFAULT_USER_AGENT = "metaharvest/0.1 (+dataset metadata harvester)"
DEFAULT_TIMEOUT = 30.0
DEFAULT_MAX_REDIRECTS = 5
DEFAULT_MAX_CHARS = 200_000
STRUCTURED_SEPARATOR = "----- Structured metadata file -----"


class FetchError(Exception):
    """A page could not be fetched. ``kind`` is one of: invalid_url, not_found,
    http_status, timeout, too_many_redirects, network."""

    def __init__(self, url: str, kind: str, cause: str):
        super().__init__(f"{kind} fetching {url}: {cause}")
        self.url = url
        self.kind = kind
        self.cause = cause


class XMLParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class DatasetSource:
    id: str
    landing_url: str
    metadata_file_url: str | None = None
    provider: str = ""
    name: str = ""

    def __post_init__(self) -> None:
        if not self.id or not self.id.strip():
            raise ValueError("dataset source id must be non-empty")
        for url in filter(None, (self.landing_url, self.metadata_file_url)):
            if not is_absolute_url(url):
                raise ValueError(f"source {self.id!r}: {url!r} is not an absolute URL")

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSource":
        return cls(
            id=d["id"],
            landing_url=d["landing_url"],
            metadata_file_url=d.get("metadata_file_url"),
            provider=d.get("provider", ""),
            name=d.get("name", ""),
        )

    def to_dict(self) -> dict:
        d = {"id": self.id, "landing_url": self.landing_url, "provider": self.provider}
        if self.metadata_file_url:
            d["metadata_file_url"] = self.metadata_file_url
        if self.name:
            d["name"] = self.name
        return d


@dataclass(frozen=True)
class SourceDocument:
    source_id: str
    page_text: str
    structured_text: str | None = None
    fetched_at: str = ""
    truncated: bool = False

    @property
    def content_hash(self) -> str:
        return content_key(self.page_text, self.structured_text)

    @property
    def full_text(self) -> str:
        if self.structured_text:
            return f"{self.page_text}\n\n{STRUCTURED_SEPARATOR}\n{self.structured_text}"
        return self.page_text


@dataclass(frozen=True)
class FetchResult:
    url: str
    body: bytes
    media_type: str


def is_absolute_url(url: str) -> bool:
    parsed = urlparse(url)
    if parsed.scheme in ("http", "https"):
        return bool(parsed.netloc)
    return parsed.scheme == "file" and bool(parsed.path)


def _fetch_file(url: str) -> FetchResult:
    path = Path(url2pathname(unquote(urlparse(url).path)))
    try:
        body = path.read_bytes()
    except FileNotFoundError:
        raise FetchError(url, "not_found", f"no such file {path}") from None
    except OSError as exc:
        raise FetchError(url, "network", str(exc)) from exc
    media_type = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
    return FetchResult(url, body, media_type)


def fetch_page(
    url: str,
    timeout: float = DEFAULT_TIMEOUT,
    *,
    max_redirects: int = DEFAULT_MAX_REDIRECTS,
    user_agent: str = DEFAULT_USER_AGENT,
    session: requests.Session | None = None,
) -> FetchResult:
    """GET ``url`` and return its body and declared media type.

    ``file://`` URLs are read from disk (used by tests and offline corpora).
    """
    scheme = urlparse(url).scheme
    if scheme == "file":
        return _fetch_file(url)
    if scheme not in ("http", "https") or not is_absolute_url(url):
        raise FetchError(url, "invalid_url", "only absolute http(s) or file URLs are supported")

    sess = session or requests.Session()
    sess.max_redirects = max_redirects
    try:
        resp = sess.get(url, timeout=timeout, headers={"User-Agent": user_agent}, allow_redirects=True)
    except requests.TooManyRedirects as exc:
        raise FetchError(url, "too_many_redirects", f"more than {max_redirects} redirects") from exc
    except requests.Timeout as exc:
        raise FetchError(url, "timeout", f"no response within {timeout}s") from exc
    except requests.RequestException as exc:
        raise FetchError(url, "network", str(exc)) from exc
    finally:
        if session is None:
            sess.close()

    if resp.status_code == 404:
        raise FetchError(url, "not_found", "HTTP 404")
    if not 200 <= resp.status_code < 300:
        raise FetchError(url, "http_status", f"HTTP {resp.status_code}")
    media_type = resp.headers.get("Content-Type", "application/octet-stream").split(";")[0].strip()
    return FetchResult(resp.url, resp.content, media_type)


class PageRenderer(Protocol):
    """Turns a URL into page bytes.

    The default renders nothing: it returns the static HTML. A headless-browser
    renderer for script-heavy pages can be dropped in by implementing ``render``.
    """

    def render(self, url: str) -> FetchResult: ...


class StaticRenderer:
    def __init__(
        self,
        timeout: float = DEFAULT_TIMEOUT,
        max_redirects: int = DEFAULT_MAX_REDIRECTS,
        user_agent: str = DEFAULT_USER_AGENT,
    ):
        self.timeout = timeout
        self.max_redirects = max_redirects
        self.user_agent = user_agent
        self.calls = 0

    def render(self, url: str) -> FetchResult:
        self.calls += 1
        return fetch_page(url, self.timeout, max_redirects=self.max_redirects, user_agent=self.user_agent)


# --------------------------------------------------------------------------
# HTML -> text

_SKIP_TAGS = {"script", "style", "noscript", "template", "svg", "iframe", "object"}
_BLOCK_TAGS = {
    "address", "article", "aside", "blockquote", "body", "br", "caption", "dd", "details",
    "dialog", "div", "dl", "dt", "fieldset", "figcaption", "figure", "footer", "form",
    "h1", "h2", "h3", "h4", "h5", "h6", "head", "header", "hgroup", "hr", "html", "legend",
    "li", "main", "nav", "ol", "p", "pre", "section", "summary", "table", "tbody", "tfoot",
    "thead", "title", "tr", "ul",
}
_CELL_TAGS = {"td", "th"}
_NON_TEXT = (Comment, Declaration, Doctype, ProcessingInstruction)
_HSPACE = re.compile(r"[^\S\n]+")
_ANYSPACE = re.compile(r"\s+")


def _walk(node: Tag, out: list[str], pre: bool = False) -> None:
    for child in node.children:
        if isinstance(child, NavigableString):
            if not isinstance(child, _NON_TEXT):
                # source line breaks are just spaces, except inside <pre>
                out.append(str(child) if pre else _ANYSPACE.sub(" ", str(child)))
            continue
        if not isinstance(child, Tag):
            continue
        name = (child.name or "").lower()
        if name in _SKIP_TAGS:
            continue
        if name in _BLOCK_TAGS:
            out.append("\n")
            _walk(child, out, pre or name == "pre")
            out.append("\n")
        elif name in _CELL_TAGS:
            out.append(" ")
            _walk(child, out, pre)
            out.append(" ")
        else:
            _walk(child, out, pre)


def normalize_whitespace(text: str) -> str:
    """Collapse horizontal whitespace, trim lines and drop blank ones."""
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    lines = (_HSPACE.sub(" ", line).strip() for line in text.split("\n"))
    return "\n".join(line for line in lines if line)


def extract_text(html: bytes | str) -> str:
    """Visible text of an HTML page, one line per block element.

    Script and style content is dropped; cells of a table row share a line.
    Never fails on malformed markup.
    """
    if isinstance(html, bytes):
        html = html.decode("utf-8", errors="replace")
    soup = BeautifulSoup(html, "html.parser")
    pieces: list[str] = []
    _walk(soup, pieces)
    return normalize_whitespace("".join(pieces))


# --------------------------------------------------------------------------
# XML -> "path: text" lines


def _local(tag) -> str:
    return etree.QName(tag).localname if isinstance(tag, str) else ""


def _line_col_to_offset(data: bytes, line: int, col: int) -> int:
    lines = data.split(b"\n")
    line = max(1, min(line, len(lines)))
    return sum(len(l) + 1 for l in lines[: line - 1]) + max(col - 1, 0)


def parse_structured_metadata(xml: bytes | str) -> str:
    """Linearize an XML metadata record as ``element/path: text`` lines.

    One line per leaf element with text, in document order, so field labels
    like ``citation/CI_Citation/title/CharacterString`` survive into the prompt.
    Leaves with no text but with attributes (ISO code lists) emit
    ``path@attr: value`` lines instead. Recoverably malformed input is repaired.
    """
    data = xml.encode("utf-8") if isinstance(xml, str) else xml
    if not data.strip():
        raise XMLParseError("empty XML document", 0)
    parser = etree.XMLParser(recover=True, resolve_entities=False, no_network=True, huge_tree=True)
    try:
        root = etree.fromstring(data, parser)
    except etree.XMLSyntaxError as exc:
        line, col = exc.position
        raise XMLParseError(f"unparseable XML: {exc.msg}", _line_col_to_offset(data, line, col)) from exc
    if root is None:
        err = parser.error_log.last_error
        offset = _line_col_to_offset(data, err.line, err.column) if err else 0
        raise XMLParseError(f"unparseable XML: {err.message if err else 'no root element'}", offset)
    if len(parser.error_log):
        logger.warning("recovered malformed XML (%d errors)", len(parser.error_log))

    lines: list[str] = []

    def visit(el, prefix: str) -> None:
        path = f"{prefix}/{_local(el.tag)}" if prefix else _local(el.tag)
        children = [c for c in el if isinstance(c.tag, str)]
        if children:
            for child in children:
                visit(child, path)
            return
        text = " ".join((el.text or "").split())
        if text:
            lines.append(f"{path}: {text}")
        else:
            for name, value in el.attrib.items():
                if value.strip():
                    lines.append(f"{path}@{_local(name)}: {' '.join(value.split())}")

    visit(root, "")
    return "\n".join(lines)


# --------------------------------------------------------------------------


def _fetch_cached(url: str, renderer: PageRenderer, store: Store | None) -> tuple[bytes, str]:
    """Fetch through the page cache; returns (body, created_at)."""
    if store is None:
        return renderer.render(url).body, ""
    key = content_key("page", url)
    entry = store.entry(key)
    if entry is None:
        body = renderer.render(url).body
        entry = store.put(key, body, "page")
    return entry.payload, entry.created_at


def ingest(
    source: DatasetSource,
    renderer: PageRenderer | None = None,
    store: Store | None = None,
    max_chars: int = DEFAULT_MAX_CHARS,
) -> SourceDocument:
    """Fetch a source's landing page (and metadata file) and build its document."""
    renderer = renderer or StaticRenderer()
    body, fetched_at = _fetch_cached(source.landing_url, renderer, store)
    page_text = extract_text(body)
    if not page_text:
        raise ValueError(f"{source.id}: landing page has no visible text")
    structured = None
    if source.metadata_file_url:
        xml_body, _ = _fetch_cached(source.metadata_file_url, renderer, store)
        structured = parse_structured_metadata(xml_body) or None

    truncated = False
    if len(page_text) > max_chars:
        logger.warning("%s: page text truncated from %d to %d characters", source.id, len(page_text), max_chars)
        page_text, truncated = page_text[:max_chars], True
    if structured and len(structured) > max_chars:
        logger.warning("%s: structured text truncated to %d characters", source.id, max_chars)
        structured, truncated = structured[:max_chars], True
    return SourceDocument(source.id, page_text, structured, fetched_at, truncated)
