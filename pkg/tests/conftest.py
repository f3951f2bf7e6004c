import numpy as np
import pytest

from attribmmf.graph import HetGraph, Node, NodeType, RelType
from attribmmf.ingest import Enrichment, RawReport, build_graph
from attribmmf.synth import SynthConfig


MW_A = "a" * 64
MW_B = "b" * 64
MW_C = "c" * 64


@pytest.fixture
def small_reports():
    """Three labelled reports sharing malware, a domain and an IP."""
    return [
        RawReport("report:r1", group="G1", iocs=[("malware", MW_A), ("domain", "evil-one.com"),
                                                 ("ip", "45.135.167.27"), ("technique", "T1071.004")]),
        RawReport("report:r2", group="G1", iocs=[("malware", MW_A), ("malware", MW_B),
                                                 ("domain", "evil-one.com")]),
        RawReport("report:r3", group="G2", iocs=[("malware", MW_C), ("ip", "45.135.167.27"),
                                                 ("vulnerability", "CVE-2019-9670")]),
    ]


@pytest.fixture
def small_enrichment():
    return Enrichment.from_dict({
        "malware": {
            MW_A: {"avclass_FAM": "lazarus", "avclass_BEH": "backdoor", "contacts_ip": ["45.135.167.27"]},
            MW_B: {"avclass_FAM": "lazarus", "contacts_domain": ["evil-one.com"]},
            MW_C: {"avclass_FAM": "other", "tags": ["peexe", "upx"]},
        },
        "ip": {"45.135.167.27": {"verdict": "malicious", "geolocation": "KP",
                                 "resolves_domains": ["evil-one.com"]}},
        "domain": {"evil-one.com": {"verdict": "malicious", "malicious_category": "c2"}},
    })


@pytest.fixture
def small_graph(small_reports, small_enrichment):
    return build_graph(small_reports, enrichment=small_enrichment)


def random_schema_graph(rng: np.random.Generator, max_nodes: int = 300) -> HetGraph:
    """Random graph obeying the relation schema, with dense enough IOC sharing to exercise every metapath."""
    g = HetGraph()
    n_reports = int(rng.integers(3, 12))
    pools = {k: [f"{k.value}:{i}" for i in range(int(rng.integers(1, 6)))]
             for k in NodeType if k is not NodeType.REPORT}
    total = n_reports + sum(len(v) for v in pools.values())
    if total > max_nodes:  # pragma: no cover - sizes above keep this far below the cap
        raise AssertionError("random graph too large")
    for kind, ids in pools.items():
        for nid in ids:
            g.add_node(Node(nid, kind))
    reports = [f"report:{i}" for i in range(n_reports)]
    for r in reports:
        g.add_node(Node(r, NodeType.REPORT))
        for kind, ids in pools.items():
            for nid in ids:
                if rng.random() < 0.25:
                    g.add_edge(r, nid, RelType.INCLUSION)
    pairs = [(NodeType.IP, NodeType.DOMAIN, RelType.RESOLUTION),
             (NodeType.IP, NodeType.MALWARE, RelType.IP_MALWARE_ASSOC),
             (NodeType.DOMAIN, NodeType.MALWARE, RelType.DOMAIN_MALWARE_ASSOC),
             (NodeType.MALWARE, NodeType.MALWARE, RelType.MALWARE_HOMOLOGY)]
    for a, b, rel in pairs:
        for x in pools[a]:
            for y in pools[b]:
                if x != y and rng.random() < 0.35:
                    g.add_edge(x, y, rel)
    return g.freeze()


@pytest.fixture
def tiny_synth():
    return SynthConfig(groups=3, reports_per_group=8, iocs_per_report=(5, 8), seed=3)


def random_model_inputs(rng: np.random.Generator, n_reports: int = 5, n_metapaths: int = 3, n_groups: int = 3):
    """Random ModelInputs plus the explicit neighbour lists and pair lists they were built from."""
    from attribmmf.model import N_IOC_TYPES, ModelInputs

    dim = 256
    x = rng.normal(size=(n_reports, dim))
    neighbours = []
    counts = np.zeros((n_reports, N_IOC_TYPES), dtype=np.int64)
    means = np.zeros((n_reports, N_IOC_TYPES, dim))
    for v in range(n_reports):
        lst = []
        for _ in range(int(rng.integers(0, 6)) if v else 0):
            t = int(rng.integers(0, N_IOC_TYPES))
            lst.append((t, rng.normal(size=dim)))
        for t, f in lst:
            counts[v, t] += 1
            means[v, t] += f
        neighbours.append(lst)
    nz = counts > 0
    means[nz] /= counts[nz][:, None]
    mps, pairs = {}, {}
    for m in range(n_metapaths):
        a = rng.random((n_reports, n_reports)) < 0.4
        a = a | a.T
        np.fill_diagonal(a, True)
        r, c = np.nonzero(a)
        mps[f"MP{m + 1}"] = (r.astype(np.int64), c.astype(np.int64))
        pairs[f"MP{m + 1}"] = list(zip(r.tolist(), c.tolist()))
    ioc_nb = [[(f"n{v}_{j}", t) for j, (t, _) in enumerate(lst)] for v, lst in enumerate(neighbours)]
    inputs = ModelInputs([f"report:{i}" for i in range(n_reports)], x, means, counts, ioc_nb, mps,
                         rng.integers(0, n_groups, size=n_reports), [f"g{i}" for i in range(n_groups)])
    return inputs, neighbours, pairs


def pytest_configure(config):
    config.acceptance_results = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "acceptance_results", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def record(request):
    """Store a pass/fail line for the acceptance summary, then assert it."""
    def _record(n: int, ok: bool, detail: str):
        request.config.acceptance_results[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return _record
