"""PubMed harvesting: Entrez search/fetch, NLM catalog lookup, MEDLINE parsing.

All network traffic goes through the ``EntrezClient`` interface so the
whole test suite can run against recorded fixtures. The live client
paces requests through a shared sliding-window rate limiter (3/s without
an API key, 10/s with one).
"""

from __future__ import annotations

import collections
import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import ParseError, TransportError

log = logging.getLogger(__name__)

EUTILS_BASE = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils"

DEFAULT_SECTION_HEADINGS = (
    "BACKGROUND",
    "OBJECTIVE",
    "OBJECTIVES",
    "METHODS",
    "RESULTS",
    "CONCLUSION",
    "CONCLUSIONS",
    "INTERPRETATION",
    "CONCLUSIONS AND RELEVANCE",
)


@dataclass(frozen=True)
class FieldQuery:
    field_name: str
    max_records: int
    from_year: Optional[int] = None
    to_year: Optional[int] = None
    publication_type_filter: str = "clinical trial"

    def __post_init__(self):
        if self.max_records < 1:
            raise ValueError("max_records must be >= 1")
        if self.from_year is not None and self.to_year is not None \
                and self.from_year > self.to_year:
            raise ValueError("date range start must be <= end")


@dataclass(frozen=True)
class RawMedlineRecord:
    record_text: str

    def __post_init__(self):
        if not re.search(r"^PMID-", self.record_text, re.M):
            raise ValueError("MEDLINE record lacks a PMID line")


@dataclass
class AbstractRecord:
    pmid: str
    title: str
    journal_id: str
    field: str
    year: int
    abstract_text: str
    is_structured: bool
    sections: list = field(default_factory=list)  # [(heading, text), ...]

    def to_json(self) -> dict:
        return {
            "pmid": self.pmid,
            "title": self.title,
            "journal_id": self.journal_id,
            "field": self.field,
            "year": self.year,
            "abstract": self.abstract_text,
            "structured": self.is_structured,
            "sections": [[h, t] for h, t in self.sections],
        }

    @classmethod
    def from_json(cls, row: dict) -> "AbstractRecord":
        return cls(
            pmid=row["pmid"],
            title=row["title"],
            journal_id=row["journal_id"],
            field=row["field"],
            year=row["year"],
            abstract_text=row["abstract"],
            is_structured=row["structured"],
            sections=[(h, t) for h, t in row["sections"]],
        )


class RateLimiter:
    """Sliding-window gate: at most ``per_second`` acquisitions in any 1s window.

    Shared by all fetch workers; thread-safe.
    """

    def __init__(self, per_second: int):
        self.per_second = per_second
        self._stamps: collections.deque = collections.deque()
        self._lock = threading.Lock()

    def acquire(self):
        while True:
            with self._lock:
                now = time.monotonic()
                while self._stamps and now - self._stamps[0] >= 1.0:
                    self._stamps.popleft()
                if len(self._stamps) < self.per_second:
                    self._stamps.append(now)
                    return
                wait = 1.0 - (now - self._stamps[0])
            time.sleep(max(wait, 1e-4))


class EntrezClient:
    """Interface over the search/retrieval and catalog endpoints."""

    def esearch(self, term: str, retstart: int, retmax: int) -> tuple:
        """Returns (pmid list for this page, total match count)."""
        raise NotImplementedError

    def efetch_medline(self, pmids: Sequence[str]) -> str:
        """Returns the concatenated MEDLINE text for the given citations."""
        raise NotImplementedError

    def catalog_journals(self, field_name: str) -> list:
        """Returns [{"jid": str, "title": str}, ...] for a specialty subject."""
        raise NotImplementedError


class LiveEntrezClient(EntrezClient):
    """HTTP client for the NCBI eutils endpoints with bounded retries."""

    def __init__(self, api_key: Optional[str] = None, rate_limiter: Optional[RateLimiter] = None,
                 max_retries: int = 3, timeout: float = 30.0, db: str = "pubmed"):
        self.api_key = api_key
        self.rate = rate_limiter or RateLimiter(10 if api_key else 3)
        self.max_retries = max_retries
        self.timeout = timeout
        self.db = db

    def _get(self, endpoint: str, params: dict) -> "requests.Response":
        import requests

        if self.api_key:
            params = {**params, "api_key": self.api_key}
        last = None
        for attempt in range(self.max_retries):
            self.rate.acquire()
            try:
                resp = requests.get(f"{EUTILS_BASE}/{endpoint}", params=params,
                                    timeout=self.timeout)
                if resp.status_code == 200:
                    return resp
                last = f"HTTP {resp.status_code}"
            except requests.RequestException as exc:
                last = str(exc)
            time.sleep(2 ** attempt)
        raise TransportError(f"{endpoint} failed after {self.max_retries} attempts: {last}")

    def esearch(self, term: str, retstart: int, retmax: int) -> tuple:
        resp = self._get("esearch.fcgi", {
            "db": self.db, "term": term, "retstart": retstart,
            "retmax": retmax, "retmode": "json",
        })
        result = resp.json()["esearchresult"]
        return list(result["idlist"]), int(result["count"])

    def efetch_medline(self, pmids: Sequence[str]) -> str:
        resp = self._get("efetch.fcgi", {
            "db": self.db, "id": ",".join(pmids),
            "rettype": "medline", "retmode": "text",
        })
        return resp.text

    def catalog_journals(self, field_name: str) -> list:
        term = f"{field_name}[st] AND currentlyindexed[All]"
        resp = self._get("esearch.fcgi", {
            "db": "nlmcatalog", "term": term, "retmax": 500, "retmode": "json",
        })
        ids = resp.json()["esearchresult"]["idlist"]
        return [{"jid": i, "title": ""} for i in ids]


class FixtureEntrezClient(EntrezClient):
    """Recorded-response client: serves a MEDLINE snapshot and a catalog file.

    Fixture layout: ``medline.txt`` (concatenated records) and
    ``catalog.json`` mapping field name -> [{"jid":..., "title":...}].
    """

    def __init__(self, fixture_dir):
        fixture_dir = Path(fixture_dir)
        text = (fixture_dir / "medline.txt").read_text(encoding="utf-8")
        self.records = split_medline_records(text)
        self.pmids = [_first_tag(r.record_text, "PMID") for r in self.records]
        catalog_path = fixture_dir / "catalog.json"
        self.catalog = json.loads(catalog_path.read_text()) if catalog_path.exists() else {}
        self.request_log: list = []

    def esearch(self, term: str, retstart: int, retmax: int) -> tuple:
        self.request_log.append(("esearch", term, retstart, retmax))
        if "match-nothing" in term:
            return [], 0
        return self.pmids[retstart:retstart + retmax], len(self.pmids)

    def efetch_medline(self, pmids: Sequence[str]) -> str:
        self.request_log.append(("efetch", tuple(pmids)))
        wanted = set(pmids)
        chunks = [r.record_text for r, p in zip(self.records, self.pmids) if p in wanted]
        return "\n\n".join(chunks)

    def catalog_journals(self, field_name: str) -> list:
        self.request_log.append(("catalog", field_name))
        return self.catalog.get(field_name, [])


def resolve_field_journals(field_name: str, client: EntrezClient,
                           _cache: dict = {}) -> set:
    """Journal identifiers whose catalog subject matches a medical specialty.

    Cached per (client, field); an unknown field yields an empty set with
    a warning rather than an error.
    """
    if not field_name:
        raise ValueError("field_name must be non-empty")
    key = (id(client), field_name)
    if key not in _cache:
        journals = client.catalog_journals(field_name)
        if not journals:
            log.warning("no catalog journals found for field %r", field_name)
        _cache[key] = {j["jid"] for j in journals}
    return _cache[key]


def build_search_term(query: FieldQuery) -> str:
    parts = [f"{query.field_name}[sb]" if query.field_name else ""]
    parts.append(f'"{query.publication_type_filter}"[pt]')
    if query.from_year is not None or query.to_year is not None:
        lo = query.from_year or 1800
        hi = query.to_year or 3000
        parts.append(f'("{lo}"[dp] : "{hi}"[dp])')
    return " AND ".join(p for p in parts if p)


def fetch_records(query: FieldQuery, client: EntrezClient,
                  page_size: int = 100) -> list:
    """Paginated search + fetch, truncated to ``query.max_records``."""
    term = build_search_term(query)
    pmids: list = []
    retstart = 0
    while len(pmids) < query.max_records:
        retmax = min(page_size, query.max_records - len(pmids))
        page, total = client.esearch(term, retstart=retstart, retmax=retmax)
        pmids.extend(page)
        retstart += len(page)
        if not page or retstart >= total:
            break
    pmids = pmids[:query.max_records]
    if not pmids:
        return []

    records: list = []
    for i in range(0, len(pmids), page_size):
        text = client.efetch_medline(pmids[i:i + page_size])
        records.extend(split_medline_records(text))
    return records[:query.max_records]


def split_medline_records(text: str) -> list:
    """Split a concatenated MEDLINE payload into per-citation records."""
    chunks = re.split(r"\n\s*\n(?=PMID-)", text.strip())
    return [RawMedlineRecord(record_text=c.strip()) for c in chunks if c.strip()]


_TAG_LINE = re.compile(r"^([A-Z]{1,4})\s*- (.*)$")


def _parse_tags(record_text: str) -> dict:
    """MEDLINE tag lines to {tag: [values]}; indented lines continue the
    previous value."""
    tags: dict = collections.defaultdict(list)
    current = None
    for line in record_text.splitlines():
        m = _TAG_LINE.match(line)
        if m:
            current = m.group(1)
            tags[current].append(m.group(2))
        elif line.startswith(" ") and current:
            tags[current][-1] += " " + line.strip()
    return tags


def _first_tag(record_text: str, tag: str) -> str:
    values = _parse_tags(record_text).get(tag, [])
    return values[0] if values else ""


def _section_pattern(headings: Sequence[str]) -> re.Pattern:
    alts = sorted(headings, key=len, reverse=True)
    joined = "|".join(re.escape(h) for h in alts)
    return re.compile(rf"(?<![\w])({joined})\s*:\s*", re.IGNORECASE)


def parse_medline_record(raw: RawMedlineRecord, field: str = "",
                         headings: Sequence[str] = DEFAULT_SECTION_HEADINGS
                         ) -> Optional[AbstractRecord]:
    """Structured AbstractRecord from one tagged MEDLINE record.

    Returns None (with a warning) when the record has no abstract;
    raises ParseError when the PMID is missing.
    """
    tags = _parse_tags(raw.record_text)
    pmid = tags.get("PMID", [""])[0].strip()
    if not pmid:
        raise ParseError(f"MEDLINE record missing PMID: {raw.record_text[:80]!r}")
    abstract = " ".join(tags.get("AB", [])).strip()
    if not abstract:
        log.warning("record %s has no abstract; skipping", pmid)
        return None

    title = tags.get("TI", [""])[0].strip()
    journal_id = tags.get("JID", [""])[0].strip()
    year = 0
    dp = tags.get("DP", [""])[0]
    m = re.search(r"\b(\d{4})\b", dp)
    if m:
        year = int(m.group(1))

    sections = _split_sections(abstract, headings)
    return AbstractRecord(
        pmid=pmid, title=title, journal_id=journal_id, field=field, year=year,
        abstract_text=abstract, is_structured=bool(sections), sections=sections,
    )


def _split_sections(abstract: str, headings: Sequence[str]) -> list:
    pattern = _section_pattern(headings)
    matches = list(pattern.finditer(abstract))
    if not matches:
        return []
    sections = []
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(abstract)
        body = abstract[m.end():end].strip()
        sections.append((m.group(1).upper(), body))
    return sections


def parse_all(raws: Iterable[RawMedlineRecord], field: str = "",
              headings: Sequence[str] = DEFAULT_SECTION_HEADINGS) -> list:
    """Parse a batch, skipping abstract-less records, enforcing pmid uniqueness."""
    out: list = []
    seen: set = set()
    for raw in raws:
        rec = parse_medline_record(raw, field=field, headings=headings)
        if rec is None:
            continue
        if rec.pmid in seen:
            raise ParseError(f"duplicate pmid in batch: {rec.pmid}")
        seen.add(rec.pmid)
        out.append(rec)
    return out
