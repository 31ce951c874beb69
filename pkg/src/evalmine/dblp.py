"""Minimal DBLP publication-search client.

Only what venue filtering needs: query by title, get back hit titles with
their venue and publication type. The HTTP transport is injectable so
recorded fixtures can stand in for the live API.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable

import requests

from .errors import TransportError

DBLP_SEARCH_URL = "https://dblp.org/search/publ/api"

# publication types DBLP uses for peer-reviewed venues; arXiv lives under
# "Informal and Other Publications" (venue CoRR)
PEER_REVIEWED_TYPES = frozenset({"Journal Articles", "Conference and Workshop Papers"})


@dataclass
class DblpHit:
    title: str
    venue: str
    type: str
    year: str = ""


Transport = Callable[[str], dict]


class DblpClient:
    def __init__(
        self,
        transport: Transport | None = None,
        base_url: str = DBLP_SEARCH_URL,
        max_hits: int = 10,
        timeout: float = 10.0,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url
        self.max_hits = max_hits
        self.timeout = timeout
        self._session = session
        self._transport = transport or self._http_transport

    def _http_transport(self, query: str) -> dict:
        session = self._session or requests.Session()
        self._session = session
        try:
            reply = session.get(
                self.base_url,
                params={"q": query, "format": "json", "h": self.max_hits},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(str(exc), transient=True) from exc
        if reply.status_code != 200:
            raise TransportError(f"HTTP {reply.status_code}", transient=reply.status_code >= 500)
        try:
            return reply.json()
        except ValueError as exc:
            raise TransportError(f"non-JSON response: {exc}") from exc

    def search(self, title: str) -> list[DblpHit]:
        body = self._transport(title)
        hits = body.get("result", {}).get("hits", {}).get("hit", [])
        if isinstance(hits, dict):  # single-hit responses come unwrapped
            hits = [hits]
        parsed = []
        for hit in hits:
            info = hit.get("info", {})
            venue = info.get("venue", "")
            if isinstance(venue, list):
                venue = "; ".join(str(v) for v in venue)
            parsed.append(DblpHit(
                title=str(info.get("title", "")),
                venue=str(venue),
                type=str(info.get("type", "")),
                year=str(info.get("year", "")),
            ))
        return parsed


_PUNCT_RE = re.compile(r"[^a-z0-9 ]+")


def normalize_title(title: str) -> str:
    return re.sub(r"\s+", " ", _PUNCT_RE.sub(" ", title.lower())).strip()


def edit_similarity(a: str, b: str) -> float:
    """1 - levenshtein(a, b) / max(len); 1.0 for two empty strings."""
    if a == b:
        return 1.0
    if not a or not b:
        return 0.0
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return 1.0 - prev[-1] / max(len(a), len(b))
