"""Fixed-depth Drain parse tree mapping raw messages to EventIDs.

The tree follows Drain3's layout and defaults: root -> length bucket ->
``tree_depth - 3`` literal-token levels -> leaf cluster lists, so the default
depth of 4 descends on the first token only.  Tokens containing a digit are
masked to ``<*>`` before they reach the tree.

EventIDs are content hashes of the final template, so they are stable across
re-parses of the same corpus.
"""

from __future__ import annotations

import hashlib
import json
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

from .corpus import Corpus

WILDCARD = "<*>"


@dataclass(frozen=True)
class DrainConfig:
    similarity_threshold: float = 0.5
    tree_depth: int = 4
    max_children: int = 100

    def __post_init__(self):
        if not 0.0 < self.similarity_threshold <= 1.0:
            raise ValueError("similarity_threshold must lie in (0, 1]")
        if self.tree_depth < 3:
            raise ValueError("tree_depth must be >= 3 (root, length bucket, leaf)")
        if self.max_children < 2:
            raise ValueError("max_children must be >= 2")

    @property
    def token_levels(self) -> int:
        return self.tree_depth - 3


def tokenize(raw: str) -> list[str]:
    return [WILDCARD if any(c.isdigit() for c in tok) else tok for tok in raw.split()]


def event_id_of(template: Sequence[str]) -> str:
    return hashlib.sha1(" ".join(template).encode("utf-8")).hexdigest()[:12]


def seq_similarity(template: Sequence[str], tokens: Sequence[str]) -> float:
    """Fraction of positions whose tokens are equal (a wildcard equals only a wildcard)."""
    if not template:
        return 1.0
    same = sum(1 for a, b in zip(template, tokens) if a == b)
    return same / len(template)


class _Cluster:
    __slots__ = ("template", "size", "index", "path")

    def __init__(self, template: list[str], index: int, path: tuple):
        self.template = template
        self.size = 0
        self.index = index
        self.path = path


class _Node:
    __slots__ = ("children", "clusters")

    def __init__(self):
        self.children: dict = {}
        self.clusters: list[_Cluster] = []


def _descend(root: _Node, tokens: list[str], config: DrainConfig, create: bool):
    """Walk to the leaf for ``tokens``; returns ``(leaf, path)`` or ``(None, None)``."""
    key = len(tokens)
    node = root.children.get(key)
    if node is None:
        if not create:
            return None, None
        node = root.children[key] = _Node()
    path = [key]
    max_children = config.max_children
    for token in tokens[: config.token_levels]:
        child = node.children.get(token)
        step = token
        if child is None:
            wild = node.children.get(WILDCARD)
            step = WILDCARD
            if not create:
                if wild is None:
                    return None, None
                child = wild
            elif token == WILDCARD:
                child = node.children[WILDCARD] = _Node()
            elif wild is not None:
                if len(node.children) < max_children:
                    child = node.children[token] = _Node()
                    step = token
                else:
                    child = wild
            elif len(node.children) + 1 < max_children:
                child = node.children[token] = _Node()
                step = token
            else:
                # the last free slot becomes the catch-all
                child = node.children[WILDCARD] = _Node()
        node = child
        path.append(step)
    return node, tuple(path)


def _best_match(leaf: _Node, tokens: list[str], threshold: float) -> _Cluster | None:
    best, best_sim, best_wild = None, -1.0, -1
    for cluster in leaf.clusters:
        sim = seq_similarity(cluster.template, tokens)
        if sim > best_sim:
            best, best_sim, best_wild = cluster, sim, cluster.template.count(WILDCARD)
        elif sim == best_sim:
            wild = cluster.template.count(WILDCARD)
            if wild > best_wild:
                best, best_wild = cluster, wild
    if best is not None and best_sim >= threshold:
        return best
    return None


class TemplateMiner:
    """Streaming Drain parser.  ``freeze()`` yields an immutable TemplateTable."""

    def __init__(self, config: DrainConfig | None = None):
        self.config = config or DrainConfig()
        self.root = _Node()
        self.clusters: list[_Cluster] = []

    def add(self, raw: str) -> int:
        """Insert one message; returns the index of the cluster it joined."""
        tokens = tokenize(raw)
        leaf, path = _descend(self.root, tokens, self.config, create=True)
        cluster = _best_match(leaf, tokens, self.config.similarity_threshold)
        if cluster is None:
            cluster = _Cluster(list(tokens), len(self.clusters), path)
            leaf.clusters.append(cluster)
            self.clusters.append(cluster)
        else:
            tmpl = cluster.template
            for i, tok in enumerate(tokens):
                if tmpl[i] != tok:
                    tmpl[i] = WILDCARD
        cluster.size += 1
        return cluster.index

    def parse_line(self, raw: str) -> str:
        """Insert ``raw`` and return the EventID of its current template."""
        return event_id_of(self.clusters[self.add(raw)].template)

    def freeze(self) -> TemplateTable:
        rows: dict[str, dict] = {}
        for cl in self.clusters:
            eid = event_id_of(cl.template)
            row = rows.get(eid)
            if row is None:
                rows[eid] = {"template": tuple(cl.template), "count": cl.size, "paths": [cl.path]}
            else:
                row["count"] += cl.size
                row["paths"].append(cl.path)
        return TemplateTable(rows, self.config)


class TemplateTable:
    """Frozen EventID -> template mapping with the parse tree for lookups."""

    def __init__(self, rows: dict[str, dict], config: DrainConfig):
        self.config = config
        self._rows = rows
        self.templates: dict[str, tuple[str, ...]] = {e: r["template"] for e, r in rows.items()}
        self.counts: dict[str, int] = {e: r["count"] for e, r in rows.items()}
        self._root = _Node()
        for eid, row in rows.items():
            for path in row["paths"]:
                node = self._root
                for key in path:
                    node = node.children.setdefault(key, _Node())
                node.clusters.append(_Cluster(list(row["template"]), 0, tuple(path)))
        self._eid_by_cluster = {}
        for node in self._iter_nodes(self._root):
            for cl in node.clusters:
                self._eid_by_cluster[id(cl)] = event_id_of(cl.template)

    @staticmethod
    def _iter_nodes(node: _Node):
        stack = [node]
        while stack:
            cur = stack.pop()
            yield cur
            stack.extend(cur.children.values())

    def __len__(self) -> int:
        return len(self.templates)

    def __contains__(self, event_id: str) -> bool:
        return event_id in self.templates

    @property
    def event_ids(self) -> list[str]:
        return list(self.templates)

    def template_text(self, event_id: str) -> str:
        return " ".join(self.templates[event_id])

    def match_only(self, raw: str) -> str | None:
        tokens = tokenize(raw)
        leaf, _ = _descend(self._root, tokens, self.config, create=False)
        if leaf is None:
            return None
        cluster = _best_match(leaf, tokens, self.config.similarity_threshold)
        return None if cluster is None else self._eid_by_cluster[id(cluster)]

    # -- serialization ----------------------------------------------------
    def to_json(self) -> str:
        rows = [
            {
                "event_id": eid,
                "template": list(r["template"]),
                "count": r["count"],
                "paths": [list(p) for p in r["paths"]],
            }
            for eid, r in self._rows.items()
        ]
        doc = {"config": self.config.__dict__, "templates": rows}
        return json.dumps(doc, indent=1, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_json(cls, text: str) -> TemplateTable:
        doc = json.loads(text)
        if isinstance(doc, list):  # bare list of rows
            doc = {"config": {}, "templates": doc}
        config = DrainConfig(**doc.get("config", {}))
        rows = {}
        for row in doc["templates"]:
            paths = row.get("paths")
            if not paths:
                tmpl = row["template"]
                paths = [[len(tmpl), *tmpl[: config.token_levels]]]
            rows[row["event_id"]] = {
                "template": tuple(row["template"]),
                "count": int(row["count"]),
                "paths": [tuple(p) for p in paths],
            }
        return cls(rows, config)

    @classmethod
    def load(cls, path: str | Path) -> TemplateTable:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def parse_corpus(corpus: Corpus, config: DrainConfig | None = None) -> tuple[TemplateTable, Corpus]:
    """One ordinal-order pass; EventIDs are assigned from the final templates."""
    miner = TemplateMiner(config)
    assignment = [miner.add(raw) for raw in corpus.raws]
    ids = [event_id_of(cl.template) for cl in miner.clusters]
    table = miner.freeze()
    return table, corpus.with_event_ids([ids[i] for i in assignment])
