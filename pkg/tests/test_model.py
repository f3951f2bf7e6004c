import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attribmmf import autograd as ag
from attribmmf.errors import EmptyTrainSet, IndexMismatch, NonFinite
from attribmmf.model import AttributionModel, ModelConfig, explain, loss, param_shapes

from conftest import random_model_inputs
from oracles import central_difference, reference_forward

TINY = dict(heads=2, head_dim=3, semantic_dim=4, dropout=0.0)


def tiny_model(inputs, seed=0, **overrides):
    cfg = ModelConfig(**{**TINY, **overrides})
    model = AttributionModel(cfg, list(inputs.metapaths), inputs.groups, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1000)
    for name, p in model.params.items():
        if name.endswith(".b"):
            p.data += rng.normal(size=p.shape) * 0.1
    return model


def max_gradient_error(model, inputs, rng, samples=25, h=1e-4):
    """Worst relative error per parameter tensor over sampled entries."""
    idx = np.arange(inputs.num_reports)

    def f():
        logits, _ = model.forward(inputs)
        return float(loss(logits, inputs.labels, idx).data)

    model.zero_grad()
    logits, _ = model.forward(inputs)
    loss(logits, inputs.labels, idx).backward()
    worst = {}
    for name, p in model.params.items():
        entries = list(np.ndindex(p.shape))
        pick = rng.choice(len(entries), min(samples, len(entries)), replace=False)
        err = 0.0
        for j in pick:
            i = entries[j]
            num = central_difference(f, p.data, i, h)
            an = p.grad[i]
            err = max(err, abs(an - num) / max(abs(an), abs(num), 1e-6))
        worst[name] = err
    return worst


@pytest.mark.parametrize("seed", range(4))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    inputs, _, _ = random_model_inputs(rng)
    model = tiny_model(inputs, seed, trainable_text_projection=seed % 2 == 0)
    worst = max_gradient_error(model, inputs, rng)
    assert max(worst.values()) < 1e-4, worst


@pytest.mark.parametrize("ioc_type, semantic", [(True, True), (False, True), (True, False), (False, False)])
def test_forward_matches_loop_reference(ioc_type, semantic):
    rng = np.random.default_rng(7)
    inputs, neighbours, pairs = random_model_inputs(rng, n_reports=6)
    model = tiny_model(inputs, 3, ioc_type_attention=ioc_type, semantic_attention=semantic)
    logits, trace = model.forward(inputs)
    ref_logits, ref_w, ref_beta = reference_forward(model.params, model.cfg, model.metapaths,
                                                    inputs.x, neighbours, pairs)
    assert np.allclose(logits.data, ref_logits, atol=1e-10)
    assert np.allclose(list(trace.beta.values()), ref_beta, atol=1e-12)
    if ioc_type:
        for v in range(inputs.num_reports):
            got = [w for _, w in trace.ioc_weights(inputs, v)]
            assert np.allclose(got, ref_w[v], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 7), st.integers(1, 4))
def test_attention_distributions_normalised(seed, n_reports, n_mp):
    rng = np.random.default_rng(seed)
    inputs, _, _ = random_model_inputs(rng, n_reports=n_reports, n_metapaths=n_mp)
    model = AttributionModel(ModelConfig(**TINY), list(inputs.metapaths), inputs.groups, seed=seed, dtype=np.float64)
    _, trace = model.forward(inputs)
    assert abs(sum(trace.beta.values()) - 1) < 1e-6
    for rows, _, alpha in trace.alpha.values():
        sums = np.bincount(rows, weights=alpha, minlength=n_reports)
        assert np.allclose(sums, 1, atol=1e-6)
    for v in range(n_reports):
        weights = trace.ioc_weights(inputs, v)
        if weights:
            assert abs(sum(w for _, w in weights) - 1) < 1e-6
            by_kind = {}
            for (nid, w), (_, t) in zip(weights, inputs.ioc_neighbors[v]):
                by_kind.setdefault(t, []).append(w)
            for ws in by_kind.values():
                assert max(ws) - min(ws) < 1e-12


def test_singleton_neighbourhoods_get_full_weight():
    rng = np.random.default_rng(0)
    inputs, _, _ = random_model_inputs(rng, n_reports=3, n_metapaths=1)
    eye = np.arange(3, dtype=np.int64)
    inputs.metapaths["MP1"] = (eye, eye)
    inputs._segments.clear()
    inputs.type_counts[:] = 0
    inputs.type_counts[1, 4] = 1
    inputs.ioc_neighbors[:] = [[], [("ioc", 4)], []]
    model = AttributionModel(ModelConfig(**TINY), ["MP1"], inputs.groups, dtype=np.float64)
    _, trace = model.forward(inputs)
    assert np.allclose(trace.alpha["MP1"][2], 1.0)
    assert trace.ioc_weights(inputs, 1) == [("ioc", 1.0)]
    assert trace.beta == {"MP1": 1.0}


def test_identical_metapaths_get_equal_semantic_weight():
    rng = np.random.default_rng(2)
    inputs, _, _ = random_model_inputs(rng, n_metapaths=1)
    inputs.metapaths["MP2"] = inputs.metapaths["MP1"]
    model = AttributionModel(ModelConfig(**TINY), ["MP1", "MP2"], inputs.groups, dtype=np.float64)
    model.params["node.MP2.a_left"].data[:] = model.params["node.MP1.a_left"].data
    model.params["node.MP2.a_right"].data[:] = model.params["node.MP1.a_right"].data
    _, trace = model.forward(inputs)
    assert abs(trace.beta["MP1"] - 0.5) < 1e-12 and abs(trace.beta["MP2"] - 0.5) < 1e-12


def test_permutation_equivariance():
    rng = np.random.default_rng(4)
    inputs, _, _ = random_model_inputs(rng, n_reports=6)
    model = tiny_model(inputs, 1)
    perm = rng.permutation(6)
    a, _ = model.forward(inputs)
    b, _ = model.forward(inputs.permuted(perm))
    assert np.allclose(a.data[perm], b.data, atol=1e-10)


def test_loss_uniform_logits():
    logits = ag.Tensor(np.zeros((4, 21)))
    value = float(loss(logits, np.array([0, 5, 20, 3]), [0, 1, 2, 3]).data)
    assert abs(value - math.log(21)) < 1e-12


def test_loss_rejects_empty_and_unlabelled():
    logits = ag.Tensor(np.zeros((2, 3)))
    with pytest.raises(EmptyTrainSet):
        loss(logits, np.array([0, 1]), [])
    with pytest.raises(EmptyTrainSet):
        loss(logits, np.array([0, -1]), [0, 1])


def test_dropout_only_in_training():
    rng = np.random.default_rng(5)
    inputs, _, _ = random_model_inputs(rng)
    model = AttributionModel(ModelConfig(**{**TINY, "dropout": 0.5}), list(inputs.metapaths), inputs.groups,
                             dtype=np.float64)
    a, _ = model.forward(inputs)
    b, _ = model.forward(inputs)
    c, _ = model.forward(inputs, training=True, rng=np.random.default_rng(0))
    assert np.array_equal(a.data, b.data) and not np.allclose(a.data, c.data)


def test_param_shapes_follow_switches():
    full = param_shapes(ModelConfig(), ["MP1", "MP2"], 6)
    assert full["node.M"] == (256, 64) and full["ioc_type.W"] == (8, 11)
    assert full["classifier.C"] == (64, 6)
    bare = param_shapes(ModelConfig(ioc_type_attention=False, semantic_attention=False), ["MP1"], 6)
    assert "ioc_type.W" not in bare and "semantic.W" not in bare


def test_missing_metapath_inputs():
    rng = np.random.default_rng(0)
    inputs, _, _ = random_model_inputs(rng, n_metapaths=1)
    model = AttributionModel(ModelConfig(**TINY), ["MP1", "MP9"], inputs.groups, dtype=np.float64)
    with pytest.raises(IndexMismatch):
        model.forward(inputs)


def test_nonfinite_input_detected():
    rng = np.random.default_rng(0)
    inputs, _, _ = random_model_inputs(rng)
    inputs.x[0, 0] = np.nan
    model = AttributionModel(ModelConfig(**TINY), list(inputs.metapaths), inputs.groups, dtype=np.float64)
    with pytest.raises(NonFinite):
        model.forward(inputs)


def test_explain_record():
    rng = np.random.default_rng(9)
    inputs, _, _ = random_model_inputs(rng)
    model = tiny_model(inputs, 2)
    rec = explain(model, inputs, "report:1")
    assert rec["report"] == "report:1"
    assert abs(sum(rec["semantic_weights"].values()) - 1) < 1e-9
    for nbrs in rec["metapath_neighbors"].values():
        assert abs(sum(n["weight"] for n in nbrs) - 1) < 1e-9
    if rec["ioc_type_attention"]:
        assert abs(sum(rec["ioc_type_attention"].values()) - 1) < 1e-9
