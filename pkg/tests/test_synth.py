from collections import Counter

import numpy as np
import pytest

from attribmmf.errors import ConfigInvalid
from attribmmf.graph import NodeType
from attribmmf.ingest import Enrichment, RawReport, build_graph
from attribmmf.metapath import builtin_metapaths, metapath_neighbors
from attribmmf.evaluation import micro_f1
from attribmmf.synth import SynthConfig, generate_synthetic, write_synthetic


def synth_graph(cfg):
    records, enrichment = generate_synthetic(cfg)
    reports = [RawReport(r["id"], r["text"], r["group"]) for r in records]
    return records, build_graph(reports, enrichment=Enrichment.from_dict(enrichment))


def test_same_seed_is_byte_identical(tmp_path, tiny_synth):
    a = write_synthetic(tiny_synth, tmp_path / "a")
    b = write_synthetic(tiny_synth, tmp_path / "b")
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
    other = SynthConfig(**{**tiny_synth.__dict__, "seed": 4})
    c = write_synthetic(other, tmp_path / "c")
    assert c[0].read_bytes() != a[0].read_bytes()


def test_default_corpus_is_balanced():
    cfg = SynthConfig()
    assert (cfg.groups, cfg.reports_per_group, cfg.noise_rate) == (6, 50, 0.2)
    records, _ = generate_synthetic(cfg)
    assert len(records) == 300
    assert set(Counter(r["group"] for r in records).values()) == {50}
    assert len({r["id"] for r in records}) == 300


def test_text_carries_no_group_name(tiny_synth):
    records, _ = generate_synthetic(tiny_synth)
    for r in records:
        assert r["group"].lower() not in r["text"].lower()


def test_every_written_ioc_survives_ingest(tiny_synth):
    records, graph = synth_graph(tiny_synth)
    for r in records:
        lines = r["text"].splitlines()[1:]
        assert len(graph.neighbors(r["id"])) == len(lines)


def test_noise_free_corpus_is_one_nn_separable():
    cfg = SynthConfig(groups=4, reports_per_group=12, noise_rate=0.0, seed=5)
    _, graph = synth_graph(cfg)
    reports = graph.reports()
    iocs = {r: graph.neighbors(r) for r in reports}
    truth, pred = [], []
    for r in reports:
        best = max((o for o in reports if o != r), key=lambda o: (len(iocs[r] & iocs[o]), o))
        truth.append(graph.labels[r])
        pred.append(graph.labels[best])
    assert micro_f1(truth, pred) == 1.0


@pytest.mark.parametrize("mp_id", ["MP2", "MP5"])
def test_noise_free_groups_never_share_neighbours(mp_id):
    cfg = SynthConfig(groups=2, reports_per_group=15, noise_rate=0.0, seed=2)
    _, graph = synth_graph(cfg)
    mp = {d.id: d for d in builtin_metapaths()}[mp_id]
    for r, nbrs in metapath_neighbors(graph, mp).items():
        assert {graph.labels[n] for n in nbrs} == {graph.labels[r]}


def test_noise_draws_from_shared_pool():
    _, graph = synth_graph(SynthConfig(groups=3, reports_per_group=10, noise_rate=0.5, seed=1))
    labels = graph.labels
    crossing = 0
    for nid in graph.node_ids():
        if graph.kind(nid) is NodeType.REPORT:
            continue
        groups = {labels[r] for r in graph.neighbors(nid, kind=NodeType.REPORT)}
        crossing += len(groups) > 1
    assert crossing > 0


def test_isolated_reports_have_private_iocs():
    cfg = SynthConfig(groups=2, reports_per_group=20, noise_rate=0.0, isolated_rate=1.0, seed=3)
    _, graph = synth_graph(cfg)
    for nid in graph.node_ids():
        if graph.kind(nid) is not NodeType.REPORT:
            assert len(graph.neighbors(nid, kind=NodeType.REPORT)) <= 1


@pytest.mark.parametrize("change", [{"noise_rate": 1.5}, {"groups": 0}, {"homology_density": -0.1},
                                    {"pool_sizes": {"widgets": 3}}, {"isolated_rate": 2.0}])
def test_invalid_configs(change):
    cfg = SynthConfig(**change)
    with pytest.raises(ConfigInvalid):
        cfg.validate()
