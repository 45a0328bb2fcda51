"""Hypernym-graph coverage and super-class grouping.

Each dataset class is anchored to a node of a WordNet-style DAG. A node's
coverage is the fraction of classes it dominates (ancestor-or-self of the
class anchor). Grouping assigns each class to its lowest ancestor whose
coverage falls inside a window, by default 5%-40%.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import ValidationError

_EPS = 1e-12


@dataclass(frozen=True)
class TaxonomyGraph:
    nodes: frozenset[str]
    parents: Mapping[str, tuple[str, ...]]
    class_anchor: Mapping[str, str]

    @classmethod
    def build(
        cls,
        nodes: Iterable[str],
        edges: Iterable[tuple[str, str]],
        anchors: Mapping[str, str],
    ) -> TaxonomyGraph:
        node_set = frozenset(nodes)
        parents: dict[str, list[str]] = {n: [] for n in node_set}
        for child, parent in edges:
            for n in (child, parent):
                if n not in node_set:
                    raise ValidationError(f"edge references unknown node {n!r}")
            if parent not in parents[child]:
                parents[child].append(parent)
        for cls_name, node in anchors.items():
            if node not in node_set:
                raise ValidationError(f"class {cls_name!r} anchored to unknown node {node!r}")
        graph = cls(
            nodes=node_set,
            parents={k: tuple(sorted(v)) for k, v in parents.items()},
            class_anchor=dict(anchors),
        )
        graph.depth  # raises on cycles
        return graph

    @classmethod
    def from_dict(cls, doc: dict) -> TaxonomyGraph:
        try:
            return cls.build(doc["nodes"], [tuple(e) for e in doc["edges"]], doc["anchors"])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"malformed taxonomy document: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "nodes": sorted(self.nodes),
            "edges": [[c, p] for c in sorted(self.parents) for p in self.parents[c]],
            "anchors": dict(sorted(self.class_anchor.items())),
        }

    @cached_property
    def depth(self) -> dict[str, int]:
        """Longest upward path from each node to a root (roots have depth 0)."""
        depth: dict[str, int] = {}
        state: dict[str, int] = {}
        for start in sorted(self.nodes):
            if start in depth:
                continue
            stack = [(start, iter(self.parents[start]))]
            state[start] = 1
            while stack:
                node, it = stack[-1]
                nxt = next(it, None)
                if nxt is None:
                    ps = self.parents[node]
                    depth[node] = 1 + max(depth[p] for p in ps) if ps else 0
                    state[node] = 2
                    stack.pop()
                elif state.get(nxt) == 1:
                    raise ValidationError(f"taxonomy has a cycle through {nxt!r}")
                elif nxt not in depth:
                    state[nxt] = 1
                    stack.append((nxt, iter(self.parents[nxt])))
        return depth

    def ancestors(self, node: str) -> set[str]:
        """Ancestor-or-self set of ``node``."""
        if node not in self.nodes:
            raise ValidationError(f"unknown node {node!r}")
        seen = {node}
        frontier = [node]
        while frontier:
            n = frontier.pop()
            for p in self.parents[n]:
                if p not in seen:
                    seen.add(p)
                    frontier.append(p)
        return seen

    def anchor_of(self, cls_name: str) -> str:
        try:
            return self.class_anchor[cls_name]
        except KeyError:
            raise ValidationError(f"class {cls_name!r} has no anchor") from None


def coverage_counts(graph: TaxonomyGraph, classes: Sequence[str]) -> dict[str, int]:
    counts: dict[str, int] = defaultdict(int)
    for c in set(classes):
        for a in graph.ancestors(graph.anchor_of(c)):
            counts[a] += 1
    return {n: counts.get(n, 0) for n in graph.nodes}


def coverage(graph: TaxonomyGraph, node: str, classes: Sequence[str]) -> float:
    if node not in graph.nodes:
        raise ValidationError(f"unknown node {node!r}")
    classes = list(dict.fromkeys(classes))
    if not classes:
        raise ValidationError("coverage over an empty class list is undefined")
    hits = sum(node in graph.ancestors(graph.anchor_of(c)) for c in classes)
    return hits / len(classes)


@dataclass(frozen=True)
class SuperClassGrouping:
    groups: tuple[tuple[str, tuple[str, ...]], ...]
    residual: tuple[str, ...] = ()
    _index: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        seen: set[str] = set()
        for i, (_, members) in enumerate(self.groups):
            for m in members:
                if m in seen:
                    raise ValidationError(f"class {m!r} belongs to more than one group")
                seen.add(m)
                self._index[m] = i
        overlap = seen.intersection(self.residual)
        if overlap:
            raise ValidationError(f"classes both grouped and residual: {sorted(overlap)}")
        for r in self.residual:
            self._index[r] = len(self.groups)

    @property
    def ignore_index(self) -> int:
        return len(self.groups)

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.groups]

    def group_of(self, cls_name: str) -> int:
        try:
            return self._index[cls_name]
        except KeyError:
            raise ValidationError(f"unknown label {cls_name!r}") from None

    def to_dict(self) -> dict:
        return {
            "groups": [{"name": n, "members": list(m)} for n, m in self.groups],
            "residual": list(self.residual),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> SuperClassGrouping:
        try:
            groups = tuple((g["name"], tuple(g["members"])) for g in doc["groups"])
            return cls(groups, tuple(doc.get("residual", ())))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed grouping document: {exc}") from exc


def _lowest_qualifying(
    graph: TaxonomyGraph, anchor: str, qualifies: Mapping[str, bool]
) -> set[str]:
    """First qualifying node met on every upward path from ``anchor``."""
    found: set[str] = set()
    seen = {anchor}
    frontier = [anchor]
    while frontier:
        n = frontier.pop()
        if qualifies[n]:
            found.add(n)
            continue
        for p in graph.parents[n]:
            if p not in seen:
                seen.add(p)
                frontier.append(p)
    return found


def group_superclasses(
    graph: TaxonomyGraph,
    classes: Sequence[str],
    p_min: float = 0.05,
    p_max: float = 0.40,
) -> SuperClassGrouping:
    """Group classes under their lowest ancestor with coverage in [p_min, p_max].

    When different upward paths stop at different ancestors, the deepest one
    wins (longest path to a root), ties broken by name. Classes without any
    qualifying ancestor end up in ``residual``.
    """
    if not 0 < p_min <= p_max <= 1:
        raise ValidationError("need 0 < p_min <= p_max <= 1")
    unique = sorted(set(classes))
    if not unique:
        raise ValidationError("no classes to group")
    graph.depth  # cycle check
    n = len(unique)
    counts = coverage_counts(graph, unique)
    qualifies = {
        node: p_min * n - _EPS <= c <= p_max * n + _EPS and c > 0
        for node, c in counts.items()
    }
    members: dict[str, list[str]] = defaultdict(list)
    residual = []
    for c in unique:
        candidates = _lowest_qualifying(graph, graph.anchor_of(c), qualifies)
        if not candidates:
            residual.append(c)
            continue
        best = min(candidates, key=lambda node: (-graph.depth[node], node))
        members[best].append(c)
    groups = tuple((node, tuple(m)) for node, m in sorted(members.items()))
    return SuperClassGrouping(groups, tuple(residual))


def remap_labels(grouping: SuperClassGrouping, labels, classes: Sequence[str] | None = None) -> np.ndarray:
    """Replace each label by its group index; residual classes map to the ignore index.

    ``labels`` holds class names, or integer indices into ``classes`` when
    that list is given. The output keeps the input's shape.
    """
    arr = np.asarray(labels)
    if classes is not None:
        lut = np.array([grouping.group_of(c) for c in classes], dtype=np.int64)
        idx = arr.astype(np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= len(classes)):
            raise ValidationError("label index outside the class list")
        return lut[idx]
    flat = [grouping.group_of(str(x)) for x in arr.ravel()]
    return np.asarray(flat, dtype=np.int64).reshape(arr.shape)


def load_taxonomy(path: str | Path) -> TaxonomyGraph:
    with open(path, encoding="utf-8") as fh:
        return TaxonomyGraph.from_dict(json.load(fh))


def load_grouping(path: str | Path) -> SuperClassGrouping:
    with open(path, encoding="utf-8") as fh:
        return SuperClassGrouping.from_dict(json.load(fh))
