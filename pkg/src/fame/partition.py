"""Failure-domain partitions: proposal, import/export, TF-IDF grouping and certification.

A proposal groups EventIDs into named failure domains.  It can come from an
external grouper (an LLM prompted once with :func:`export_prompt_payload`) or
from :func:`tfidf_grouping`.  :func:`certify` validates it against the K-shot
signals and freezes it into a :class:`CertifiedPartition`.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np
from scipy.sparse.csgraph import connected_components
from sklearn.feature_extraction.text import TfidfVectorizer

from .corpus import Corpus
from .drain import WILDCARD, TemplateTable
from .kshot import KShotSample

UNIVERSAL = "UNIVERSAL_NORMAL"
PURE = "pure_anomaly"
MIXED = "mixed"

PROMPT_INSTRUCTIONS = """\
You are given one row per log EventID (a parser-derived template) with its
offline line count, whether its labeled sample contains normal lines
(has_normal) and anomalous lines (has_anomaly), and at most one
representative line of each kind.

Group EventIDs by underlying failure mechanism (subsystem or fault type).
Ignore boilerplate tokens such as severity labels, node identifiers,
timestamps and hexadecimal payloads.  Choose the number of groups yourself
and give each group a short UPPER_SNAKE_CASE name describing the failure
domain.  Include one group named UNIVERSAL_NORMAL for routine events that do
not belong to any failure domain; EventIDs you leave out are treated as
UNIVERSAL_NORMAL.  No EventID may appear in more than one group.

Answer with JSON only, in the form of `response_template`:
{"groups": {"UNIVERSAL_NORMAL": [...], "SOME_FAILURE_DOMAIN": [...]}}
"""


class PartitionError(ValueError):
    pass


@dataclass
class ProposedPartition:
    """Ordered ``name -> EventIDs``; always holds ``UNIVERSAL_NORMAL``."""

    groups: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        self.groups.setdefault(UNIVERSAL, [])
        seen: dict[str, str] = {}
        for name, members in self.groups.items():
            for eid in members:
                if eid in seen and seen[eid] != name:
                    raise PartitionError(f"EventID {eid} appears in groups {seen[eid]!r} and {name!r}")
                seen[eid] = name

    def expert_groups(self) -> list[tuple[str, list[str]]]:
        return [(n, m) for n, m in self.groups.items() if n != UNIVERSAL]

    def complete(self, event_ids: Iterable[str]) -> ProposedPartition:
        """Default every EventID not mentioned to UNIVERSAL_NORMAL."""
        assigned = {e for m in self.groups.values() for e in m}
        groups = {n: list(m) for n, m in self.groups.items()}
        groups[UNIVERSAL].extend(e for e in event_ids if e not in assigned)
        return ProposedPartition(groups)

    def to_json(self) -> str:
        return json.dumps({"groups": self.groups}, indent=1)


# ---------------------------------------------------------------------------
# export / import
# ---------------------------------------------------------------------------


def export_prompt_payload(table: TemplateTable, sample: KShotSample, offline: Corpus) -> dict:
    rows = []
    for eid in table.event_ids:
        s = sample.per_event.get(eid)
        row = {
            "event_id": eid,
            "template": table.template_text(eid),
            "count": table.counts[eid],
            "has_normal": bool(s and s.has_normal),
            "has_anomaly": bool(s and s.has_anomaly),
        }
        if s is not None and s.rep_normal is not None:
            row["rep_normal"] = offline.raws[s.rep_normal]
        if s is not None and s.rep_anomaly is not None:
            row["rep_anomaly"] = offline.raws[s.rep_anomaly]
        rows.append(row)
    return {
        "instructions": PROMPT_INSTRUCTIONS,
        "event_stats": rows,
        "response_template": {"groups": {UNIVERSAL: [r["event_id"] for r in rows]}},
    }


def import_partition(doc: str | Mapping, known: Iterable[str]) -> ProposedPartition:
    """Parse ``{"groups": {name: [event_ids]}}`` against the known EventIDs."""
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise PartitionError(f"partition document is not valid JSON: {exc}") from None
    if not isinstance(doc, Mapping) or not isinstance(doc.get("groups"), Mapping):
        raise PartitionError('partition document must be {"groups": {name: [event_ids]}}')
    known = list(known)
    known_set = set(known)
    groups: dict[str, list[str]] = {}
    owner: dict[str, str] = {}
    for name, members in doc["groups"].items():
        if not isinstance(members, list):
            raise PartitionError(f"group {name!r} must list EventIDs")
        for eid in members:
            if eid not in known_set:
                raise PartitionError(f"unknown EventID {eid!r} in group {name!r}")
            if eid in owner:
                raise PartitionError(f"EventID {eid} appears in groups {owner[eid]!r} and {name!r}")
            owner[eid] = name
        groups[str(name)] = list(members)
    return ProposedPartition(groups).complete(known)


# ---------------------------------------------------------------------------
# TF-IDF over templates
# ---------------------------------------------------------------------------


def _template_tokens(tokens) -> list[str]:
    return [t.lower() for t in tokens if t != WILDCARD]


def template_vectors(table: TemplateTable) -> tuple[list[str], np.ndarray]:
    """L2-normalized TF-IDF rows over template tokens, one per EventID (table order)."""
    eids = table.event_ids
    docs = [_template_tokens(table.templates[e]) for e in eids]
    if not any(docs):
        return eids, np.zeros((len(eids), 1))
    vec = TfidfVectorizer(analyzer=lambda toks: toks)
    V = vec.fit_transform(docs).toarray()
    return eids, V


def tfidf_grouping(
    table: TemplateTable, sample: KShotSample, link_threshold: float = 0.5
) -> ProposedPartition:
    """Single-link clusters of anomaly-signal templates joined at cosine >= threshold."""
    eids, V = template_vectors(table)
    anomalous = [i for i, e in enumerate(eids) if sample.per_event.get(e) and sample.per_event[e].has_anomaly]
    groups: dict[str, list[str]] = {UNIVERSAL: []}
    if anomalous:
        A = V[anomalous]
        sim = A @ A.T
        adj = sim >= link_threshold - 1e-12
        np.fill_diagonal(adj, True)
        _, comp = connected_components(adj, directed=False)
        order: dict[int, int] = {}
        for c in comp:
            order.setdefault(int(c), len(order))
        for j, i in enumerate(anomalous):
            name = f"DOMAIN_{order[int(comp[j])] + 1}"
            groups.setdefault(name, []).append(eids[i])
    # insertion order of DOMAIN_k follows first member; rebuild so names ascend
    ordered = {UNIVERSAL: []}
    for k in range(1, len(groups)):
        ordered[f"DOMAIN_{k}"] = groups[f"DOMAIN_{k}"]
    return ProposedPartition(ordered).complete(eids)


# ---------------------------------------------------------------------------
# certification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CertifiedPartition:
    """Frozen mapping EventID -> domain index.  Index 0 is UNIVERSAL_NORMAL."""

    domain_names: tuple[str, ...]
    rho: tuple[str | None, ...]
    pi: Mapping[str, int]
    notes: tuple = ()

    universal_index = 0

    def __post_init__(self):
        object.__setattr__(self, "pi", MappingProxyType(dict(self.pi)))
        if self.domain_names[0] != UNIVERSAL or self.rho[0] is not None:
            raise PartitionError("domain 0 must be UNIVERSAL_NORMAL without a type flag")
        if any(r not in (PURE, MIXED) for r in self.rho[1:]):
            raise PartitionError("every expert domain needs rho in {pure_anomaly, mixed}")

    @property
    def n_domains(self) -> int:
        return len(self.domain_names)

    @property
    def expert_domains(self) -> list[int]:
        return list(range(1, self.n_domains))

    def members(self, domain: int) -> list[str]:
        return [e for e, d in self.pi.items() if d == domain]

    def is_pure(self, domain: int) -> bool:
        return self.rho[domain] == PURE

    def domain_of(self, event_id: str | None) -> int:
        return self.pi.get(event_id, 0)

    def as_proposal(self) -> ProposedPartition:
        groups = {name: self.members(i) for i, name in enumerate(self.domain_names)}
        return ProposedPartition(groups)

    def to_dict(self) -> dict:
        return {
            "domains": [
                {"index": i, "name": n, "rho": r, "event_ids": self.members(i)}
                for i, (n, r) in enumerate(zip(self.domain_names, self.rho))
            ],
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> CertifiedPartition:
        domains = sorted(doc["domains"], key=lambda d: d["index"])
        pi = {e: d["index"] for d in domains for e in d["event_ids"]}
        return cls(
            tuple(d["name"] for d in domains),
            tuple(d["rho"] for d in domains),
            pi,
            tuple(tuple(n) if isinstance(n, list) else n for n in doc.get("notes", [])),
        )


def _centroid(V: np.ndarray, rows: list[int], weights=None) -> np.ndarray:
    if not rows:
        return np.zeros(V.shape[1])
    return np.average(V[rows], axis=0, weights=weights)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


def certify(
    proposal: ProposedPartition,
    sample: KShotSample,
    pool: np.ndarray,
    offline: Corpus,
    table: TemplateTable,
    distinctness_threshold: float = 0.7,
    pool_sample: int = 10_000,
    seed: int = 0,
) -> CertifiedPartition:
    """Assign type flags or dissolve groups; the result is frozen.

    Groups without anomaly signal are dissolved.  Groups whose EventIDs are
    all anomaly-only become pure-anomaly domains if their template centroid
    is far enough (cosine < threshold) from a seeded sample of the
    UNIVERSAL_NORMAL pool; otherwise they are dissolved.  Everything else is
    a mixed domain.  Dissolution can change the universal pool, so the
    distinctness check is repeated until no further group dissolves.
    """
    known = set(table.event_ids)
    for name, members in proposal.groups.items():
        for eid in members:
            if eid not in known:
                raise PartitionError(f"unknown EventID {eid!r} in group {name!r}")
    proposal = proposal.complete(table.event_ids)

    def sig(eid):
        s = sample.per_event.get(eid)
        return (bool(s and s.has_normal), bool(s and s.has_anomaly))

    universal = set(proposal.groups[UNIVERSAL])
    notes = []
    status: dict[str, str] = {}
    candidates: list[str] = []
    for name, members in proposal.expert_groups():
        signals = [sig(e) for e in members]
        if not members or not any(a for _, a in signals):
            status[name] = "dissolved"
            universal.update(members)
            notes.append((name, "dissolved", "no anomaly signal"))
        elif all(a and not n for n, a in signals):
            candidates.append(name)
        else:
            status[name] = MIXED

    eids, V = template_vectors(table)
    row_of = {e: i for i, e in enumerate(eids)}
    pool = np.asarray(pool, dtype=np.int64)
    pool_eids = np.asarray(offline.event_ids, dtype=object)[pool] if len(pool) else np.empty(0, dtype=object)
    cosines: dict[str, float] = {}
    while candidates:
        in_universal = np.fromiter((e in universal for e in pool_eids), dtype=bool, count=len(pool_eids))
        lines = pool[in_universal]
        if len(lines) > pool_sample:
            rng = np.random.default_rng(seed)
            lines = np.sort(rng.choice(lines, size=pool_sample, replace=False))
        counts: dict[str, int] = {}
        for i in lines.tolist():
            e = offline.event_ids[i]
            counts[e] = counts.get(e, 0) + 1
        normal_c = _centroid(V, [row_of[e] for e in counts], list(counts.values()) or None)
        dissolved = []
        for name in candidates:
            c = _centroid(V, [row_of[e] for e in proposal.groups[name]])
            cosines[name] = _cosine(c, normal_c)
            if cosines[name] >= distinctness_threshold:
                dissolved.append(name)
        if not dissolved:
            break
        for name in dissolved:
            candidates.remove(name)
            status[name] = "dissolved"
            universal.update(proposal.groups[name])
            notes.append((name, "dissolved", f"cosine {cosines[name]:.4f} to normal pool"))
    for name in candidates:
        status[name] = PURE
        notes.append((name, PURE, f"cosine {cosines[name]:.4f} to normal pool"))

    names, rho, pi = [UNIVERSAL], [None], {}
    for name, members in proposal.expert_groups():
        if status[name] in (PURE, MIXED):
            names.append(name)
            rho.append(status[name])
            for e in members:
                pi[e] = len(names) - 1
    for e in table.event_ids:
        pi.setdefault(e, 0)
    return CertifiedPartition(tuple(names), tuple(rho), pi, tuple(notes))
