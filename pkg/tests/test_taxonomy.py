import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edgevfm.exceptions import ValidationError
from edgevfm.fixtures import data_path
from edgevfm.taxonomy import (
    SuperClassGrouping,
    TaxonomyGraph,
    coverage,
    coverage_counts,
    group_superclasses,
    load_taxonomy,
    remap_labels,
)

import oracles


def star(n=20):
    leaves = [f"leaf{i:02d}" for i in range(n)]
    return TaxonomyGraph.build(["root", *leaves], [(x, "root") for x in leaves], {x: x for x in leaves}), leaves


def two_subtrees():
    a = [f"a{i}" for i in range(8)]
    b = [f"b{i}" for i in range(12)]
    nodes = ["root", "A", "B", *a, *b]
    edges = [("A", "root"), ("B", "root")] + [(x, "A") for x in a] + [(x, "B") for x in b]
    return TaxonomyGraph.build(nodes, edges, {x: x for x in a + b}), a, b


@pytest.fixture(scope="module")
def dag():
    return load_taxonomy(data_path("taxonomy_20.json"))


def test_coverage_examples():
    g, leaves = star()
    assert coverage(g, "root", leaves) == 1.0
    assert coverage(g, "leaf03", leaves) == 0.05
    with pytest.raises(ValidationError):
        coverage(g, "nope", leaves)


def test_star_each_leaf_own_group():
    g, leaves = star()
    grouping = group_superclasses(g, leaves)
    assert grouping.names == leaves
    assert grouping.residual == ()
    strict = group_superclasses(g, leaves, p_min=0.06)
    assert strict.groups == () and strict.residual == tuple(leaves)


def test_two_subtrees():
    g, a, b = two_subtrees()
    grouping = group_superclasses(g, a + b, p_min=0.10, p_max=0.40)
    assert grouping.groups == (("A", tuple(a)),)
    assert grouping.residual == tuple(sorted(b))
    assert grouping.ignore_index == 1


def test_dag_matches_exhaustive_enumeration(dag):
    doc = json.loads(data_path("taxonomy_20.json").read_text())
    classes = sorted(doc["anchors"])
    for p_min, p_max in ((0.05, 0.40), (0.15, 0.40), (0.10, 0.25), (0.2, 0.5)):
        groups, residual, cover = oracles.brute_force_grouping(
            doc["nodes"], [tuple(e) for e in doc["edges"]], doc["anchors"], classes, p_min, p_max
        )
        grouping = group_superclasses(dag, classes, p_min, p_max)
        assert {k: list(v) for k, v in grouping.groups} == groups
        assert list(grouping.residual) == residual
        assert coverage_counts(dag, classes) == cover


def test_diamond_resolves_to_deepest(dag):
    classes = sorted(dag.class_anchor)
    grouping = group_superclasses(dag, classes, 0.15, 0.40)
    # vehicle and boat are equally deep, so the name order decides
    assert dag.depth["vehicle"] == dag.depth["boat"] == 2
    assert grouping.group_of("amphicar") == grouping.names.index("boat")
    assert grouping.group_of("car") == grouping.names.index("vehicle")


def test_cycle_rejected():
    with pytest.raises(ValidationError):
        TaxonomyGraph.build(["a", "b"], [("a", "b"), ("b", "a")], {"x": "a"})


def test_unknown_nodes_rejected():
    with pytest.raises(ValidationError):
        TaxonomyGraph.build(["a"], [("a", "b")], {})
    with pytest.raises(ValidationError):
        TaxonomyGraph.build(["a"], [], {"x": "b"})


def test_remap_labels(dag):
    classes = sorted(dag.class_anchor)
    grouping = group_superclasses(dag, classes, 0.15, 0.40)
    names = np.array([["dog", "car"], ["pizza", "canoe"]])
    out = remap_labels(grouping, names)
    assert out.shape == (2, 2)
    assert out[0, 0] == grouping.names.index("mammal")
    assert out[1, 0] == grouping.ignore_index
    idx = np.array([classes.index("dog"), classes.index("pizza")])
    assert remap_labels(grouping, idx, classes).tolist() == [out[0, 0], grouping.ignore_index]
    with pytest.raises(ValidationError):
        remap_labels(grouping, ["unicorn"])


def test_grouping_roundtrip(dag):
    grouping = group_superclasses(dag, sorted(dag.class_anchor), 0.15, 0.40)
    assert SuperClassGrouping.from_dict(json.loads(json.dumps(grouping.to_dict()))) == grouping


def test_graph_roundtrip(dag):
    assert TaxonomyGraph.from_dict(dag.to_dict()).to_dict() == dag.to_dict()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from(["dog", "cat", "horse", "eagle", "sparrow", "car", "bicycle",
                                 "hammer", "drill", "canoe", "amphicar", "pizza"]), min_size=1))
def test_coverage_monotone_along_ancestors(classes):
    g = load_taxonomy(data_path("taxonomy_20.json"))
    counts = coverage_counts(g, classes)
    for child, parents in g.parents.items():
        for p in parents:
            assert counts[p] >= counts[child]


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 0.5), st.floats(0.0, 0.5))
def test_every_class_assigned_once(p_min, extra):
    g = load_taxonomy(data_path("taxonomy_20.json"))
    classes = sorted(g.class_anchor)
    grouping = group_superclasses(g, classes, p_min, min(1.0, p_min + extra))
    members = [m for _, ms in grouping.groups for m in ms] + list(grouping.residual)
    assert sorted(members) == classes
