"""Report acquisition and segmentation.

A report enters as a URL, HTML, extracted PDF text, or plain text; it is
normalized to a :class:`CleanReport` (ordered heading/body blocks with code
kept verbatim) and split into :class:`Passage` segments along section
headings, with a sliding-window fallback for oversized sections.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from html.parser import HTMLParser

import requests

logger = logging.getLogger(__name__)


class IngestError(Exception):
    pass


class FetchError(IngestError):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class ReportSource(str, Enum):
    URL = "url"
    HTML = "html"
    PDF = "pdf"
    TEXT = "text"


@dataclass
class RawReport:
    source: ReportSource
    payload: bytes
    origin: str | None = None

    def __post_init__(self) -> None:
        if not self.payload:
            raise IngestError("empty report payload")


class BlockKind(str, Enum):
    HEADING = "heading"
    BODY = "body"


@dataclass(frozen=True)
class Block:
    kind: BlockKind
    text: str
    level: int = 0  # heading level 1..6; 0 for body


@dataclass
class CleanReport:
    title: str | None = None
    blocks: list[Block] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class Passage:
    """One model-sized segment of a report.

    ``text`` is body content only; the section heading lives in ``heading``
    so that reassembling passage texts reproduces the report body exactly.
    """

    passage_id: str
    heading: str | None
    text: str
    order: int
    char_offset: int

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise IngestError(f"passage {self.passage_id} has empty text")

    def prompt_text(self, include_heading: bool = True) -> str:
        if include_heading and self.heading:
            return f"{self.heading}\n{self.text}"
        return self.text

    def to_dict(self) -> dict:
        return {
            "passage_id": self.passage_id,
            "heading": self.heading,
            "text": self.text,
            "order": self.order,
            "char_offset": self.char_offset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Passage":
        return cls(d["passage_id"], d.get("heading"), d["text"], d["order"], d.get("char_offset", 0))


def fetch(url: str, timeout: float = 30.0) -> RawReport:
    """Retrieve a report over http(s); the content type decides whether the
    payload is treated as HTML or PDF."""
    if not re.match(r"^https?://", url):
        raise FetchError(f"not an http(s) URL: {url}")
    try:
        response = requests.get(url, timeout=timeout)
    except requests.RequestException as exc:
        raise FetchError(f"fetch failed: {exc}") from exc
    if not 200 <= response.status_code < 300:
        raise FetchError(f"HTTP {response.status_code} for {url}", status=response.status_code)
    content_type = response.headers.get("content-type", "").split(";")[0].strip().lower()
    if content_type in ("text/html", "application/xhtml+xml"):
        source = ReportSource.HTML
    elif content_type == "application/pdf":
        source = ReportSource.PDF
    elif content_type.startswith("text/"):
        source = ReportSource.TEXT
    else:
        raise FetchError(f"unsupported content type {content_type!r} for {url}")
    return RawReport(source=source, payload=response.content, origin=url)


# --- HTML ------------------------------------------------------------------

_SKIP_TAGS = {"script", "style", "nav", "noscript", "template", "head", "iframe", "svg"}
_FLUSH_TAGS = {"p", "div", "section", "article", "br", "ul", "ol", "table", "tr", "blockquote"}
_HEADING_RE = re.compile(r"^h([1-6])$")


class _Extractor(HTMLParser):
    """Tolerant block extractor: headings become heading blocks; paragraphs,
    list items and linearized table rows become body blocks; pre/code content
    is preserved byte for byte."""

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.blocks: list[Block] = []
        self.title: str | None = None
        self._skip_depth = 0
        self._pre_depth = 0
        self._in_title = False
        self._heading_level = 0
        self._buffer: list[str] = []
        self._cells: list[str] | None = None  # current table row

    def _flush(self) -> None:
        text = "".join(self._buffer)
        self._buffer = []
        if self._pre_depth:
            if text.strip("\n"):
                self.blocks.append(Block(BlockKind.BODY, text.strip("\n")))
            return
        text = re.sub(r"\s+", " ", text).strip()
        if not text:
            return
        if self._heading_level:
            self.blocks.append(Block(BlockKind.HEADING, text, self._heading_level))
        else:
            self.blocks.append(Block(BlockKind.BODY, text))

    def handle_starttag(self, tag, attrs):
        if tag == "title":
            self._in_title = True
            return
        if tag in _SKIP_TAGS:
            self._skip_depth += 1
            return
        if self._skip_depth:
            return
        match = _HEADING_RE.match(tag)
        if match:
            self._flush()
            self._heading_level = int(match.group(1))
            return
        if self._heading_level and (tag in _FLUSH_TAGS or tag == "li"):
            # Unclosed heading tag: a block element ends the heading.
            self._flush()
            self._heading_level = 0
        if tag in ("pre", "code"):
            if not self._pre_depth:
                self._flush()
            self._pre_depth += 1
            return
        if tag == "tr":
            self._flush()
            self._cells = []
            return
        if tag in ("td", "th") and self._cells is not None:
            self._flush_cell()
            return
        if tag in _FLUSH_TAGS or tag == "li":
            self._flush()

    def _flush_cell(self) -> None:
        text = re.sub(r"\s+", " ", "".join(self._buffer)).strip()
        self._buffer = []
        if text:
            self._cells.append(text)

    def handle_endtag(self, tag):
        if tag == "title":
            self._in_title = False
            return
        if tag in _SKIP_TAGS:
            self._skip_depth = max(0, self._skip_depth - 1)
            return
        if self._skip_depth:
            return
        if _HEADING_RE.match(tag):
            self._flush()
            self._heading_level = 0
            return
        if tag in ("pre", "code"):
            if self._pre_depth == 1:
                self._flush()
            self._pre_depth = max(0, self._pre_depth - 1)
            return
        if tag == "tr" and self._cells is not None:
            self._flush_cell()
            if self._cells:
                self.blocks.append(Block(BlockKind.BODY, " | ".join(self._cells)))
            self._cells = None
            return
        if tag in ("td", "th") and self._cells is not None:
            self._flush_cell()
            return
        if tag in _FLUSH_TAGS or tag == "li":
            self._flush()

    def handle_data(self, data):
        if self._in_title:
            self.title = ((self.title or "") + data).strip()
            return
        if self._skip_depth:
            return
        self._buffer.append(data)

    def close(self):
        super().close()
        self._flush()


def html_to_text(payload: bytes | str) -> CleanReport:
    """Strip markup down to heading/body blocks. Malformed HTML is tolerated;
    a document with no extractable text yields zero blocks plus a flag."""
    html = payload.decode("utf-8", errors="replace") if isinstance(payload, bytes) else payload
    extractor = _Extractor()
    extractor.feed(html)
    extractor.close()
    report = CleanReport(title=extractor.title, blocks=extractor.blocks)
    if not report.blocks:
        report.flags.append("empty-content")
    return report


# --- PDF-extracted / plain text ---------------------------------------------

_NUMBERED_HEADING_RE = re.compile(r"^(\d+(\.\d+)*)\.?\s+\S")


def _looks_like_heading(line: str) -> bool:
    words = line.split()
    if not words or len(words) > 10 or len(line) > 80:
        return False
    if line.rstrip().endswith((".", ":", ";", ",")):
        return False
    if _NUMBERED_HEADING_RE.match(line):
        return True
    alpha_words = [w for w in words if w[0].isalpha()]
    if not alpha_words:
        return False
    capitalized = sum(1 for w in alpha_words if w[0].isupper())
    return capitalized == len(alpha_words) and len(words) >= 1


def _heading_level(line: str) -> int:
    match = _NUMBERED_HEADING_RE.match(line)
    if match:
        return min(6, match.group(1).count(".") + 1)
    return 1 if line.isupper() else 2


def pdf_text_to_clean(text: str) -> CleanReport:
    """Segment already-extracted PDF text. Short title-cased or numbered
    lines without a terminal period are treated as headings; consecutive
    other lines collapse into body blocks at blank-line boundaries."""
    report = CleanReport()
    paragraph: list[str] = []

    def flush_paragraph() -> None:
        if paragraph:
            report.blocks.append(Block(BlockKind.BODY, " ".join(paragraph)))
            paragraph.clear()

    for raw_line in text.splitlines():
        line = raw_line.strip()
        if not line:
            flush_paragraph()
            continue
        if _looks_like_heading(line):
            flush_paragraph()
            report.blocks.append(Block(BlockKind.HEADING, line, _heading_level(line)))
        else:
            paragraph.append(line)
    flush_paragraph()
    if not report.blocks:
        report.flags.append("empty-content")
    return report


def text_to_clean(payload: bytes | str) -> CleanReport:
    """Plain text: same heuristics as PDF-extracted text."""
    text = payload.decode("utf-8", errors="replace") if isinstance(payload, bytes) else payload
    return pdf_text_to_clean(text)


# --- section splitting -------------------------------------------------------


def _window_words(words: list[str], max_words: int, overlap_words: int) -> list[list[str]]:
    if len(words) <= max_words:
        return [words]
    stride = max_words - overlap_words
    windows = []
    start = 0
    while True:
        windows.append(words[start : start + max_words])
        if start + max_words >= len(words):
            break
        start += stride
    return windows


def split_sections(
    report: CleanReport, max_words: int = 300, overlap_words: int = 50
) -> list[Passage]:
    """One passage per heading-delimited section; sections longer than
    ``max_words`` are windowed with ``overlap_words`` shared between
    consecutive chunks. Deterministic for identical input."""
    if not (max_words > overlap_words >= 0):
        raise ValueError(
            f"require max_words > overlap_words >= 0, got {max_words}/{overlap_words}"
        )

    sections: list[tuple[str | None, list[str]]] = []
    current_heading: str | None = None
    current_texts: list[str] = []
    for block in report.blocks:
        if block.kind is BlockKind.HEADING:
            if current_texts:
                sections.append((current_heading, current_texts))
            current_heading = block.text
            current_texts = []
        else:
            current_texts.append(block.text)
    if current_texts:
        sections.append((current_heading, current_texts))

    passages: list[Passage] = []
    offset = 0  # char offset into the de-overlapped concatenation of passage texts
    index = 0
    stride = max_words - overlap_words
    for heading, texts in sections:
        section_text = "\n".join(texts)
        words = section_text.split()
        if not words:
            continue
        if len(words) <= max_words:
            passages.append(Passage(f"p{index:04d}", heading, section_text, index, offset))
            index += 1
            offset += len(section_text) + 1
            continue
        # Char position of each word within the whitespace-normalized section.
        word_starts = []
        pos = 0
        for word in words:
            word_starts.append(pos)
            pos += len(word) + 1
        for w_index, window in enumerate(_window_words(words, max_words, overlap_words)):
            chunk = " ".join(window)
            passages.append(
                Passage(
                    f"p{index:04d}",
                    heading,
                    chunk,
                    index,
                    offset + word_starts[w_index * stride],
                )
            )
            index += 1
        offset += pos  # pos already counts one trailing separator
    return passages


def clean_report_from_raw(raw: RawReport, pdf_extractor=None) -> CleanReport:
    """Dispatch on report source. PDF byte parsing is delegated to a caller
    supplied ``pdf_extractor(bytes) -> str`` hook."""
    if raw.source is ReportSource.HTML:
        return html_to_text(raw.payload)
    if raw.source is ReportSource.PDF:
        if pdf_extractor is None:
            raise IngestError(
                "PDF input requires a text extractor; pass extracted text instead "
                "or configure a pdf_extractor hook"
            )
        return pdf_text_to_clean(pdf_extractor(raw.payload))
    return text_to_clean(raw.payload)
