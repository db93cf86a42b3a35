import numpy as np
import pytest

from kbforge import nn
from kbforge.corpus import Sentence, Span, Token
from kbforge.datagen import Bag
from kbforge.kb import Entity, KnowledgeBase, Triple, build_fact_type_templates
from kbforge.relations import (
    ExtractedTriple,
    REConfig,
    REModel,
    RelationError,
    aggregate_bag,
    bag_instances,
    extract,
    load_model,
    save_model,
    segment_anchors,
    sliding_margin_loss,
    span_distance,
    train_re,
)

from gradcheck import gradcheck


def mk_sentence(words, heads, sid="s0", tags=None):
    tags = tags or ["N"] * len(words)
    toks = [Token(i, w, tags[i], heads[i]) for i, w in enumerate(words)]
    return Sentence(sid, toks)


def re_kb():
    ents = [Entity("e1", "Tony", (), "person"),
            Entity("e2", "Pepper", (), "person"),
            Entity("e3", "Mark", (), "suit")]
    return KnowledgeBase(ents, [Triple("e1", "knows", "e2"),
                                Triple("e1", "wears", "e3")])


def tiny_cfg(**kw):
    base = dict(word_dim=3, pos_dim=2, type_dim=2, tag_dim=2, hidden=4,
                conv_width=3, max_pos=5, seed=0)
    base.update(kw)
    return REConfig(**base)


def tiny_model(relations=("knows", "wears"), dtype=None, **kw):
    cfg = tiny_cfg(**kw)
    return REModel(cfg, list(relations),
                   ["Tony", "knows", "wears", "Pepper", "Mark"],
                   ["person", "suit"], ["N", "V"], dtype=dtype)


def pair_sentence(sid="s0"):
    s = mk_sentence(["Tony", "knows", "Pepper"], [1, -1, 1], sid)
    subj = Span(0, 0, "Tony", "person", linked="e1")
    obj = Span(2, 2, "Pepper", "person", linked="e2")
    s.spans = [subj, obj]
    return s, subj, obj


def reversed_sentence(sid="s1"):
    # object precedes subject; subject span is two tokens wide
    s = mk_sentence(["Pepper", "visited", "Tony", "Stark"], [1, -1, 1, 2], sid)
    obj = Span(0, 0, "Pepper", "person", linked="e2")
    subj = Span(2, 3, "Tony Stark", "person", linked="e1")
    s.spans = [obj, subj]
    return s, subj, obj


# -- geometry helpers ---------------------------------------------------------


def test_span_distance_sign_convention():
    sp = Span(3, 5, "x y z")
    assert span_distance(0, sp) == -3
    assert span_distance(3, sp) == 0
    assert span_distance(4, sp) == 0
    assert span_distance(5, sp) == 0
    assert span_distance(8, sp) == 3


def test_segment_anchors_orientation():
    a, b = Span(0, 1, "s"), Span(3, 4, "o")
    assert segment_anchors(a, b) == (1, 4, 0)
    assert segment_anchors(b, a) == (1, 4, 1)
    with pytest.raises(RelationError):
        segment_anchors(Span(0, 2, "s"), Span(2, 3, "o"))


def test_config_validation():
    with pytest.raises(ValueError):
        tiny_cfg(margin=0.0)
    with pytest.raises(ValueError):
        tiny_cfg(hidden=5)
    with pytest.raises(ValueError):
        tiny_cfg(down_weight=0.0)
    with pytest.raises(ValueError):
        tiny_cfg(gate_softmax_axis="channels")


# -- encoders -----------------------------------------------------------------


def test_encode_tokens_shape_and_overlap_guard():
    m = tiny_model()
    s, subj, obj = pair_sentence()
    x = m.encode_tokens(s, subj, obj)
    assert x.shape == (m.cfg.token_dim, 3)
    with pytest.raises(RelationError):
        m.encode_tokens(s, subj, Span(0, 1, "Tony knows"))


def test_pcnn_leading_anchor_zeroes_first_segment():
    m = tiny_model()
    s, subj, obj = pair_sentence()
    x = m.encode_tokens(s, subj, obj)
    out = m.pcnn_encode(x, 0, 2)
    h = m.cfg.hidden
    assert out.shape == (3 * h, 1)
    assert np.all(out.data[:h] == 0.0)          # empty [0,-1] segment
    assert np.any(out.data[h:] != 0.0)


def test_pcnn_rejects_bad_anchors():
    m = tiny_model()
    s, subj, obj = pair_sentence()
    x = m.encode_tokens(s, subj, obj)
    for i, j in ((2, 2), (3, 1), (-1, 2)):
        with pytest.raises(RelationError):
            m.pcnn_encode(x, i, j)


def test_encode_sentence_direction_flag():
    m = tiny_model()
    s, subj, obj = pair_sentence()
    _, _, direction = m.encode_sentence(s, subj, obj)
    assert direction == 0
    s2, subj2, obj2 = reversed_sentence()
    _, _, direction2 = m.encode_sentence(s2, subj2, obj2)
    assert direction2 == 1


def test_cgcn_rejects_mismatched_adjacency():
    m = tiny_model()
    s, subj, obj = pair_sentence()
    x = m.encode_tokens(s, subj, obj)
    with pytest.raises(RelationError):
        m.cgcn_encode(x, np.eye(5, dtype=np.float32), subj, obj)


# -- loss ---------------------------------------------------------------------


def scalar_loss(r, y, b=0.5, margin=0.1, down_weight=0.5):
    scores = nn.Parameter(np.array([[r]], dtype=np.float64), "r")
    threshold = nn.Parameter(np.array([[b]], dtype=np.float64), "b")
    loss = sliding_margin_loss(scores, np.array([y], dtype=np.float64),
                               threshold, margin, down_weight)
    return loss, threshold, scores


def test_loss_hand_values():
    loss, _, _ = scalar_loss(0.9, 1.0)
    assert loss.item() == pytest.approx(0.0, abs=1e-9)
    loss, _, _ = scalar_loss(0.9, 0.0)
    assert loss.item() == pytest.approx(0.125, abs=1e-9)
    # positive short of the upper margin: (0.6 - 0.55)^2
    loss, _, _ = scalar_loss(0.55, 1.0)
    assert loss.item() == pytest.approx(0.0025, abs=1e-9)


def test_loss_zero_iff_margins_satisfied():
    rng = np.random.default_rng(2)
    for _ in range(200):
        r = float(rng.uniform(0, 1))
        y = float(rng.integers(2))
        b = float(rng.uniform(0.2, 0.8))
        margin = float(rng.uniform(0.05, 0.2))
        loss, _, _ = scalar_loss(r, y, b, margin)
        satisfied = (r >= b + margin) if y else (r <= b - margin)
        assert (loss.item() == 0.0) == satisfied


def test_loss_matches_independent_formula():
    rng = np.random.default_rng(7)
    for _ in range(100):
        k = int(rng.integers(1, 6))
        scores = rng.uniform(0, 1, size=(k, 1))
        labels = rng.integers(0, 2, size=k).astype(np.float64)
        b = float(rng.uniform(0.2, 0.8))
        margin = float(rng.uniform(0.05, 0.2))
        lam = float(rng.uniform(0.2, 2.0))

        pos = np.maximum(0.0, (b + margin) - scores[:, 0]) ** 2 * labels
        neg = np.maximum(0.0, scores[:, 0] - (b - margin)) ** 2 * (1 - labels) * lam
        want = float(np.sum(pos + neg))

        loss = sliding_margin_loss(nn.Tensor(scores.astype(np.float64)), labels,
                                   nn.Parameter(np.array([[b]]), "b"), margin, lam)
        assert loss.item() == pytest.approx(want, abs=1e-9)


def test_loss_gradient_reaches_threshold():
    loss, threshold, scores = scalar_loss(0.9, 0.0)
    loss.backward()
    # d/dB of (r - (B - margin))^2 * lambda = -2 * 0.5 * 0.5 = -0.5
    assert threshold.grad is not None
    assert threshold.grad.reshape(()) == pytest.approx(-0.5, abs=1e-9)
    assert scores.grad is not None


# -- bag aggregation ----------------------------------------------------------


def test_aggregate_bag_permutation_invariant_to_the_bit():
    rng = np.random.default_rng(0)
    pairs = [(nn.Tensor(rng.standard_normal((6, 1)).astype(np.float32)),
              nn.Tensor(rng.uniform(0, 1, (6, 1)).astype(np.float32)))
             for _ in range(5)]
    base = aggregate_bag(pairs).data.tobytes()
    for seed in range(6):
        perm = np.random.default_rng(seed).permutation(len(pairs))
        shuffled = [pairs[i] for i in perm]
        assert aggregate_bag(shuffled).data.tobytes() == base


def test_aggregate_bag_rejects_empty():
    with pytest.raises(RelationError):
        aggregate_bag([])


def test_bag_instances_requires_linked_spans():
    s, _, _ = pair_sentence("sid1")
    bag = Bag("e1", "e9", (), ("sid1",))
    with pytest.raises(RelationError):
        bag_instances(bag, {"sid1": s})


# -- end-to-end gradients -----------------------------------------------------


def test_full_model_gradients_float64():
    model = tiny_model(dtype=np.float64)
    s1, subj1, obj1 = pair_sentence("g0")
    s2, subj2, obj2 = reversed_sentence("g1")
    instances = [(s1, subj1, obj1), (s2, subj2, obj2)]
    labels = np.array([1.0, 0.0])

    def make_loss():
        scores = model.forward_bag(instances)
        return sliding_margin_loss(scores, labels, model.threshold,
                                   model.cfg.margin, model.cfg.down_weight)

    # attention-path gradients sit near 2e-7 while the dominant ones are ~0.2;
    # a pure relative error there measures float64 round-off, not correctness,
    # so floor the denominator at 1e-6
    err = gradcheck(make_loss, model.parameters(), floor=1e-6)
    assert err < 1e-4


# -- prediction and extraction ------------------------------------------------


def test_predict_applies_threshold():
    model = tiny_model()
    model.trained = True
    s, subj, obj = pair_sentence()
    scores, predicted = model.predict([(s, subj, obj)])
    assert scores.shape == (2,)
    model.threshold.data[:] = -1.0
    _, all_in = model.predict([(s, subj, obj)])
    assert all_in == {"knows", "wears"}
    model.threshold.data[:] = 2.0
    _, none_in = model.predict([(s, subj, obj)])
    assert none_in == set()


def test_validate_triple_reasons():
    from kbforge.relations import validate_triple
    types = {"e1": "person", "e2": "person", "e3": "suit"}
    template = {"knows": (frozenset({"person"}), frozenset({"person"})),
                "wears": (frozenset({"person"}), frozenset({"suit"}))}
    assert validate_triple(Triple("e1", "knows", "e2"), types, template) == (True, None)
    assert validate_triple(Triple("e1", "flies", "e2"), types, template) \
        == (False, "unknown-relation")
    assert validate_triple(Triple("e3", "knows", "e2"), types, template) \
        == (False, "subject-type")
    assert validate_triple(Triple("e1", "wears", "e2"), types, template) \
        == (False, "object-type")


def test_extract_filters_by_type_template():
    kb = re_kb()
    model = REModel(tiny_cfg(), ["ghost"] + kb.relations,
                    ["Tony", "knows", "wears", "Pepper", "Mark"],
                    kb.types, ["N"])
    model.trained = True
    model.threshold.data[:] = -1.0      # every relation fires for every pair

    s1, _, _ = pair_sentence("x1")
    s2 = mk_sentence(["Tony", "wears", "Mark"], [1, -1, 1], "x2")
    s2.spans = [Span(0, 0, "Tony", "person", linked="e1"),
                Span(2, 2, "Mark", "suit", linked="e3")]

    rejected = []
    accepted = extract([s1, s2], kb, model, rejected_log=rejected)
    got = {(t.subject, t.relation, t.object) for t in accepted}
    assert got == {("e1", "knows", "e2"), ("e2", "knows", "e1"),
                   ("e1", "wears", "e3")}
    reasons = {r for _, r in rejected}
    assert reasons == {"unknown-relation", "subject-type", "object-type"}
    for t in accepted:
        assert 0.0 < t.confidence < 1.0


def test_extract_requires_trained_model():
    kb = re_kb()
    model = tiny_model()
    with pytest.raises(RelationError):
        extract([], kb, model)


def test_templates_mined_from_kb():
    kb = re_kb()
    template = build_fact_type_templates(kb)
    assert template == {"knows": (frozenset({"person"}), frozenset({"person"})),
                        "wears": (frozenset({"person"}), frozenset({"suit"}))}


# -- training and persistence -------------------------------------------------


def small_training_setup():
    kb = re_kb()
    s1, _, _ = pair_sentence("t1")
    s2 = mk_sentence(["Tony", "wears", "Mark"], [1, -1, 1], "t2")
    s2.spans = [Span(0, 0, "Tony", "person", linked="e1"),
                Span(2, 2, "Mark", "suit", linked="e3")]
    s3, _, _ = reversed_sentence("t3")
    sentences = {s.id: s for s in (s1, s2, s3)}
    bags = [Bag("e1", "e2", ("knows",), ("t1", "t3")),
            Bag("e1", "e3", ("wears",), ("t2",)),
            Bag("e2", "e1", (), ("t1", "t3"))]
    return kb, sentences, bags


def test_train_re_runs_and_learns_something():
    kb, sentences, bags = small_training_setup()
    cfg = tiny_cfg(epochs=8, learning_rate=0.02)
    model = train_re(bags, sentences, kb, cfg)
    assert model.trained
    assert len(model.epoch_losses) == 8
    assert model.epoch_losses[-1] < model.epoch_losses[0]


def test_train_re_rejects_empty():
    kb, sentences, _ = small_training_setup()
    with pytest.raises(RelationError):
        train_re([], sentences, kb, tiny_cfg())


def test_model_round_trip_scores_exactly(tmp_path):
    kb, sentences, bags = small_training_setup()
    model = train_re(bags, sentences, kb, tiny_cfg(epochs=2))
    path = tmp_path / "re.ckpt"
    save_model(model, path)
    back = load_model(path)
    assert back.trained
    assert back.relations == model.relations
    inst = bag_instances(bags[0], sentences)
    a, pred_a = model.predict(inst)
    b, pred_b = back.predict(inst)
    assert np.array_equal(a, b)
    assert pred_a == pred_b


def test_extracted_triple_conversion():
    t = ExtractedTriple("e1", "knows", "e2", 0.9, ("s1",))
    assert t.triple() == Triple("e1", "knows", "e2")
