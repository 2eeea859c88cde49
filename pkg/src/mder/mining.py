"""Long-term trend mining over extracted entities: canonicalization,
per-year co-occurrence networks, edge-weight filtering, betweenness
centrality rankings, and dataset-frequency statistics.

Paper records are JSON Lines:

    {"paper_id": "...", "year": 2019, "methods": [...], "datasets": [...]}

Graphs are undirected with integer `weight` = number of papers containing
both endpoint methods; no self-loops.
"""

from __future__ import annotations

import csv
import json
import re
import string
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import networkx as nx

from .errors import ConfigurationError

_WS_RE = re.compile(r"\s+")
_STRIP_CHARS = string.punctuation + string.whitespace

YEAR_MIN, YEAR_MAX = 1950, 2100


def canonicalize(surface: str, alias_map: dict[str, str] | None = None) -> str:
    """Lowercase, trim, collapse internal whitespace, strip surrounding
    punctuation, then follow the alias map (to a fixpoint, so the result is
    stable under re-canonicalization)."""

    def normalize(s: str) -> str:
        return _WS_RE.sub(" ", s.strip(_STRIP_CHARS).lower()).strip(_STRIP_CHARS)

    out = normalize(surface)
    if alias_map:
        seen = {out}
        while out in alias_map:
            out = normalize(alias_map[out])
            if out in seen:  # defensive: alias cycles stop here
                break
            seen.add(out)
    return out


@dataclass
class PaperEntities:
    paper_id: str
    year: int
    methods: set[str] = field(default_factory=set)
    datasets: set[str] = field(default_factory=set)

    def __post_init__(self):
        if not YEAR_MIN <= self.year <= YEAR_MAX:
            raise ConfigurationError(
                f"implausible year {self.year} for paper {self.paper_id!r}"
            )


def load_papers(
    path: str | Path,
    alias_map: dict[str, str] | None = None,
    exclude: set[str] | None = None,
) -> list[PaperEntities]:
    """Read paper records, dropping excluded surfaces (exact match on the
    trimmed surface, before canonicalization) and canonicalizing the rest."""
    exclude = {e.strip() for e in (exclude or set())}
    papers = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                paper = PaperEntities(
                    str(obj["paper_id"]),
                    int(obj["year"]),
                    _clean_entities(obj.get("methods", []), alias_map, exclude),
                    _clean_entities(obj.get("datasets", []), alias_map, exclude),
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ConfigurationError(f"{path}:{lineno}: malformed record: {exc}")
            papers.append(paper)
    return papers


def _clean_entities(surfaces, alias_map, exclude) -> set[str]:
    out = set()
    for surface in surfaces:
        if str(surface).strip() in exclude:
            continue
        canon = canonicalize(str(surface), alias_map)
        if canon:
            out.add(canon)
    return out


def build_graph(papers: list[PaperEntities], year: int) -> nx.Graph:
    """Co-occurrence network of that year's methods: edge weight counts the
    papers containing both endpoints."""
    g = nx.Graph(year=year)
    for paper in papers:
        if paper.year != year:
            continue
        for a, b in combinations(sorted(paper.methods), 2):
            if g.has_edge(a, b):
                g[a][b]["weight"] += 1
            else:
                g.add_edge(a, b, weight=1)
    return g


def filter_edges(g: nx.Graph, min_weight: int) -> nx.Graph:
    """Keep edges with weight >= min_weight and drop nodes left isolated.
    The strict 'weight > w' reading of a threshold is min_weight = w + 1."""
    if min_weight < 1:
        raise ConfigurationError(f"min_weight must be >= 1, got {min_weight}")
    out = nx.Graph(**g.graph)
    for a, b, data in g.edges(data=True):
        if data["weight"] >= min_weight:
            out.add_edge(a, b, **data)
    for node in out.nodes:
        out.nodes[node].update(g.nodes[node])
    return out


def betweenness(g: nx.Graph) -> dict[str, float]:
    """Unnormalized shortest-path betweenness on the unweighted skeleton
    (hop counts only; equal-length paths share credit fractionally)."""
    return nx.betweenness_centrality(g, normalized=False, weight=None)


def top_k(scores: dict[str, float], k: int) -> list[tuple[str, float]]:
    """The k best-scoring entities, descending; ties break lexicographically."""
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:k]


def dataset_frequency(papers: list[PaperEntities], year: int) -> dict[str, int]:
    """Papers per canonical dataset in the given year (each paper counts a
    dataset once)."""
    counts: dict[str, int] = {}
    for paper in papers:
        if paper.year != year:
            continue
        for name in paper.datasets:
            counts[name] = counts.get(name, 0) + 1
    return counts


# --------------------------------------------------------------------------
# Files: alias / exclusion / category lists, graph and ranking exports
# --------------------------------------------------------------------------


def _read_lines(path: str | Path) -> list[str]:
    with Path(path).open(encoding="utf-8") as fh:
        return [
            line.strip()
            for line in fh
            if line.strip() and not line.lstrip().startswith("#")
        ]


def load_alias_map(path: str | Path) -> dict[str, str]:
    """One mapping per line: `surface<TAB>canonical`."""
    aliases = {}
    for line in _read_lines(path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise ConfigurationError(f"alias line needs one tab: {line!r}")
        aliases[canonicalize(parts[0])] = parts[1].strip()
    return aliases


def load_exclusions(path: str | Path) -> set[str]:
    """One excluded surface term per line."""
    return set(_read_lines(path))


def load_categories(path: str | Path) -> dict[str, str]:
    """Optional node categories, one `entity<TAB>category` per line."""
    categories = {}
    for line in _read_lines(path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise ConfigurationError(f"category line needs one tab: {line!r}")
        categories[canonicalize(parts[0])] = parts[1].strip()
    return categories


def annotate_categories(g: nx.Graph, categories: dict[str, str]) -> None:
    for node in g.nodes:
        if node in categories:
            g.nodes[node]["category"] = categories[node]


def graph_to_node_link(g: nx.Graph) -> dict:
    return nx.node_link_data(g, edges="links")


def write_graph_json(g: nx.Graph, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(graph_to_node_link(g), fh, indent=2, sort_keys=True)


def write_graphml(g: nx.Graph, path: str | Path) -> None:
    nx.write_graphml(g, path)


def write_rankings_csv(
    rows: list[tuple[int, int, str, float]], path: str | Path
) -> None:
    """Rows of (year, rank, entity, score)."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["year", "rank", "entity", "score"])
        writer.writerows(rows)
