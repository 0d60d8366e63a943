from dataclasses import replace

import numpy as np
import pytest

from oracles import adam_trace
from pathrgcn import autodiff as ad
from pathrgcn.autodiff import Parameter
from pathrgcn.corpus import MentionKind, parse_sample
from pathrgcn.embeddings import HashEmbeddings
from pathrgcn.model import AblationFlags, GatedRGCN, ModelConfig
from pathrgcn.synth import SynthSpec, generate_corpus
from pathrgcn.training import (
    AdamState,
    TrainConfig,
    adam_step,
    analyze_by_bucket,
    doc_count_bucket,
    evaluate,
    hop_count_bucket,
    prepare,
    sweep_layers,
    train,
)

SMALL = ModelConfig(d=8, L=1, embed_dim=8, max_docs=3)
EMB = HashEmbeddings(8)


def corpus(n, seed, **kw):
    return [s.sample for s in generate_corpus(SynthSpec(num_samples=n, seed=seed, **kw))]


def quick(**kw):
    base = dict(batch_size=4, learning_rate=1e-2, epochs=2, seed=3, model=SMALL)
    base.update(kw)
    return TrainConfig(**base)


# -- Adam -------------------------------------------------------------------------------
def test_adam_zero_gradient_is_identity():
    p = Parameter("x", [1.5, -2.0])
    state = AdamState()
    for _ in range(3):
        adam_step([p], {"x": np.zeros(2)}, state, TrainConfig())
    np.testing.assert_array_equal(p.data, [1.5, -2.0])


def test_adam_first_step_moves_by_learning_rate():
    p = Parameter("x", [1.0])
    adam_step([p], {"x": np.array([1.0])}, AdamState(), TrainConfig())
    assert abs((p.data[0] - 1.0) + 2e-4) < 1e-11


@pytest.mark.parametrize("lr,frozen", [(0.1, 0.07624915560691221), (2e-4, 0.9980001290577963)])
def test_adam_trace_matches_scripted_oracle(lr, frozen):
    p = Parameter("x", [1.0])
    state = AdamState()
    cfg = TrainConfig(learning_rate=lr)
    trace = []
    for _ in range(10):
        adam_step([p], {"x": 2.0 * p.data}, state, cfg)
        trace.append(float(p.data[0]))
    expect = adam_trace(1.0, 10, lr)
    assert max(abs(a - b) for a, b in zip(trace, expect)) < 1e-10
    # last value frozen from the scripted oracle
    assert abs(trace[-1] - frozen) < 1e-10


def test_adam_shape_mismatch():
    with pytest.raises(ad.DimensionError):
        adam_step([Parameter("x", [1.0, 2.0])], {"x": np.zeros(3)}, AdamState(), TrainConfig())


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)
    d = TrainConfig().to_dict()
    assert d["batch_size"] == 16 and d["learning_rate"] == 2e-4 and d["model"]["d"] == 256


# -- training -----------------------------------------------------------------------------
@pytest.fixture(scope="module")
def data():
    return corpus(24, seed=1), corpus(12, seed=2)


def test_zero_learning_rate_leaves_parameters(data):
    train_set, _ = data
    start = train(train_set[:1], quick(epochs=0), EMB).model
    result = train(train_set[:1], quick(epochs=1, learning_rate=0.0), EMB)
    assert len(result.loss_trace) == 1 and result.loss_trace[0] > 0
    for p in start.params:
        assert np.array_equal(result.model.params[p.name].data, p.data)


def test_training_is_deterministic(data):
    train_set, dev = data
    a = train(train_set, quick(), EMB, dev=dev)
    b = train(train_set, quick(), EMB, dev=dev)
    assert a.loss_trace == b.loss_trace and a.dev_trace == b.dev_trace
    for p in a.model.params:
        assert np.array_equal(b.model.params[p.name].data, p.data)
    c = train(train_set, quick(seed=4), EMB)
    assert c.loss_trace != a.loss_trace


def test_loss_decreases(data):
    train_set, _ = data
    result = train(train_set, quick(epochs=4), EMB)
    assert result.loss_trace[-1] < result.loss_trace[0]


def test_best_dev_parameters_are_kept(data):
    train_set, dev = data
    records = []
    result = train(train_set, quick(epochs=6, patience=2), EMB, dev=dev, metrics=records.append)
    assert [r["epoch"] for r in records] == list(range(1, len(result.dev_trace) + 1))
    best = int(np.argmax(result.dev_trace))
    assert result.best_epoch == best + 1
    assert evaluate(dev, result.model, embedder=EMB).accuracy == result.dev_trace[best]
    # early stopping fires after `patience` epochs without improvement
    assert len(result.dev_trace) - result.best_epoch <= 2


def test_samples_without_answer_node_are_skipped(data):
    train_set, _ = data
    broken = {
        "id": "gone", "query": "r sam hill", "supports": ["Sam Hill is in Kel Park."],
        "candidates": ["kel park", "tor vale"], "answer": "tor vale",
    }
    result = train([*train_set[:3], broken], quick(epochs=1), EMB)
    assert result.skipped == {"answer_not_in_graph": 1}
    report = evaluate([broken], result.model, embedder=EMB)
    assert report.scored == 1 and report.correct == 0
    assert report.skipped == {"answer_not_in_graph": 1}
    with pytest.raises(ValueError):
        train([broken], quick(epochs=1), EMB)
    with pytest.raises(ValueError):
        train([], quick(), EMB)


# -- evaluation ------------------------------------------------------------------------------
def flat_model(config=SMALL):
    """Every node gets the same logit, so the first candidate always wins."""
    model = GatedRGCN(config)
    model.params["ffn.W2"].data[...] = 0.0
    return model


def test_uniform_model_is_at_chance():
    samples = corpus(500, seed=9)
    report = evaluate(samples, flat_model(), embedder=EMB)
    first = sum(s.answer == s.candidates[0] for s in samples) / len(samples)
    assert report.accuracy == first
    assert abs(report.accuracy - 0.2) < 0.05


def test_single_correct_sample_and_repeatability():
    (sample,) = corpus(1, seed=5)
    answer_first = replace(sample, candidates=(sample.answer, *[c for c in sample.candidates if c != sample.answer]))
    report = evaluate([answer_first], flat_model(), embedder=EMB)
    assert report.accuracy == 1.0 and report.correct == 1
    again = evaluate([answer_first], flat_model(), embedder=EMB)
    assert again.to_dict() == report.to_dict()


def test_threads_do_not_change_the_report():
    samples = corpus(30, seed=6)
    model = GatedRGCN(SMALL)
    a = evaluate(samples, model, embedder=EMB)
    b = evaluate(samples, model, embedder=EMB, threads=3)
    assert a.to_dict() == b.to_dict() and a.predictions == b.predictions


def test_unlabeled_samples_are_not_scored():
    (sample,) = corpus(1, seed=5)
    report = evaluate([replace(sample, answer=None)], GatedRGCN(SMALL), embedder=EMB)
    assert report.scored == 0 and report.accuracy == 0.0
    assert report.skipped == {"unlabeled": 1}


def test_checkpoint_flags_override(data):
    _, dev = data
    model = GatedRGCN(SMALL)
    flags = AblationFlags(use_reasoning_entities=False)
    report = evaluate(dev, model, flags=flags, embedder=EMB)
    assert report.scored == len(dev)
    ex = prepare(dev, replace(SMALL, ablation=flags))
    assert all(m.kind is not MentionKind.REASONING for e in ex for m in e.graph.nodes)


# -- buckets ---------------------------------------------------------------------------------
def test_doc_count_buckets():
    samples = corpus(10, seed=8, hop_depth=2, num_distractor_docs=0)
    report = analyze_by_bucket(samples, GatedRGCN(SMALL), "doc_count", embedder=EMB)
    assert set(report.per_bucket) == {"1-4"}
    assert report.per_bucket["1-4"][0] == 10


def test_bucket_recombination_and_generator_counts():
    mixed = []
    expected_docs, expected_hops = {}, {}
    for k, (hops, extra) in enumerate([(1, 0), (2, 3), (3, 6), (2, 13), (1, 16)]):
        for s in generate_corpus(SynthSpec(num_samples=8, seed=30 + k, hop_depth=hops, num_distractor_docs=extra)):
            mixed.append(s.sample)
            n = s.metadata()["num_docs"]
            label = ">16" if n > 16 else next(
                f"{lo}-{lo + 3}" for lo in (1, 5, 9, 13) if lo <= n <= lo + 3
            )
            expected_docs[label] = expected_docs.get(label, 0) + 1
            chain_docs = str(len(s.gold_chain) - 1)
            expected_hops[chain_docs] = expected_hops.get(chain_docs, 0) + 1
    model = GatedRGCN(replace(SMALL, max_docs=4))
    for fn, expected in (("doc_count", expected_docs), ("hop_count", expected_hops)):
        report = analyze_by_bucket(mixed, model, fn, embedder=EMB)
        assert {k: c for k, (c, _) in report.per_bucket.items()} == expected
        total = sum(c for c, _ in report.per_bucket.values())
        assert total == report.scored
        recombined = sum(c * a for c, a in report.per_bucket.values()) / total
        assert abs(recombined - report.accuracy) < 1e-12


def test_hop_bucket_without_paths():
    rec = {"id": "n", "query": "r nobody", "supports": ["Tor Vale is big."], "candidates": ["tor vale"]}
    (ex,) = prepare([parse_sample(rec)], SMALL)
    assert hop_count_bucket(ex) == "inf"
    assert doc_count_bucket(ex) == "1-4"


# -- layer sweep -----------------------------------------------------------------------------
def test_sweep_single_and_constant_size(data):
    train_set, dev = data
    cfg = quick(epochs=1)
    one = sweep_layers(train_set[:8], cfg, [1], dev[:4], EMB)
    assert list(one) == [1] and set(one[1]) == {"accuracy", "parameters", "epochs"}
    two = sweep_layers(train_set[:8], cfg, [1, 3], dev[:4], EMB)
    assert two[1]["parameters"] == two[3]["parameters"]
    assert two[1] == one[1]
    with pytest.raises(ValueError):
        sweep_layers(train_set[:8], cfg, [0], dev[:4], EMB)
