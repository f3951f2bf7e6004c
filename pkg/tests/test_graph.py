import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attribmmf.errors import FormatError, IdConflict, MissingNode, SchemaViolation
from attribmmf.graph import (ALL_KINDS, IOC_KINDS, HetGraph, Node, NodeType, RelType, graph_from_dict,
                             graph_to_dict, load_graph, save_graph)


def make_pair():
    g = HetGraph()
    g.add_node(Node("report:1", NodeType.REPORT))
    g.add_node(Node("ip:1.2.3.4", NodeType.IP, {"ip_address": "1.2.3.4"}))
    return g


def test_kind_orderings_are_lexicographic():
    assert [k.value for k in ALL_KINDS] == sorted(k.value for k in NodeType)
    assert len(IOC_KINDS) == 11 and NodeType.REPORT not in IOC_KINDS


def test_edge_is_undirected():
    g = make_pair()
    g.add_edge("ip:1.2.3.4", "report:1", RelType.INCLUSION)
    assert g.neighbors("report:1") == {"ip:1.2.3.4"}
    assert g.neighbors("ip:1.2.3.4") == {"report:1"}
    assert list(g.edges()) == [("ip:1.2.3.4", "report:1", RelType.INCLUSION)]


def test_schema_rejects_wrong_relation():
    g = make_pair()
    with pytest.raises(SchemaViolation):
        g.add_edge("report:1", "ip:1.2.3.4", RelType.RESOLUTION)


def test_self_loop_rejected():
    g = make_pair()
    with pytest.raises(SchemaViolation):
        g.add_edge("report:1", "report:1", RelType.INCLUSION)


def test_missing_endpoint():
    g = make_pair()
    with pytest.raises(MissingNode):
        g.add_edge("report:1", "domain:nope.com", RelType.INCLUSION)


def test_unknown_attribute_rejected():
    g = HetGraph()
    with pytest.raises(SchemaViolation):
        g.add_node(Node("ip:1.1.1.1", NodeType.IP, {"colour": "red"}))


def test_conflicting_kind_and_attrs():
    g = make_pair()
    with pytest.raises(IdConflict):
        g.add_node(Node("ip:1.2.3.4", NodeType.DOMAIN))
    with pytest.raises(IdConflict):
        g.add_node(Node("ip:1.2.3.4", NodeType.IP, {"ip_address": "9.9.9.9"}))
    # merging a compatible attribute is fine
    g.add_node(Node("ip:1.2.3.4", NodeType.IP, {"geolocation": "KP"}))
    assert g.nodes["ip:1.2.3.4"].attrs == {"ip_address": "1.2.3.4", "geolocation": "KP"}


def test_labels_only_on_reports():
    g = make_pair()
    with pytest.raises(SchemaViolation):
        g.set_label("ip:1.2.3.4", "G")
    g.set_label("report:1", "G")
    assert g.labels == {"report:1": "G"}


def test_frozen_graph_is_read_only():
    g = make_pair().freeze()
    with pytest.raises(RuntimeError):
        g.add_node(Node("report:2", NodeType.REPORT))


def test_round_trip(tmp_path, small_graph):
    path = tmp_path / "graph.json"
    save_graph(small_graph, path)
    again = load_graph(path)
    assert again.structurally_equal(small_graph)
    save_graph(again, tmp_path / "graph2.json")
    assert path.read_bytes() == (tmp_path / "graph2.json").read_bytes()


def test_bad_edge_reports_line(tmp_path, small_graph):
    data = graph_to_dict(small_graph)
    data["edges"].append({"src": "report:r1", "dst": "report:r2", "rel": "inclusion"})
    path = tmp_path / "bad.json"
    save_graph(small_graph, path)
    text = path.read_text()
    text = text.replace('"edges": [\n', '"edges": [\n{"dst": "report:r2", "rel": "inclusion", "src": "report:r1"},\n')
    path.write_text(text)
    with pytest.raises(FormatError) as info:
        load_graph(path)
    assert info.value.line is not None and "edges[0]" in str(info.value)


def test_unknown_top_level_key():
    with pytest.raises(FormatError):
        graph_from_dict({"nodes": [], "edges": [], "extra": 1})


def test_invalid_json(tmp_path):
    path = tmp_path / "g.json"
    path.write_text("{\n  nope")
    with pytest.raises(FormatError) as info:
        load_graph(path)
    assert info.value.line == 2


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), max_size=25))
def test_dict_round_trip_property(pairs):
    g = HetGraph()
    for i in range(6):
        g.add_node(Node(f"report:{i}", NodeType.REPORT))
        g.add_node(Node(f"malware:{i}", NodeType.MALWARE))
    for a, b in pairs:
        g.add_edge(f"report:{a}", f"malware:{b}", RelType.INCLUSION)
    again = graph_from_dict(json.loads(json.dumps(graph_to_dict(g))))
    assert again.structurally_equal(g)
    assert again.num_edges() == len(set(pairs))
