import math
import random

import numpy as np
import pytest

from pathcl.emitter import ContrastiveInstance, InstanceMeta
from pathcl.trainer import (
    MCQAExample,
    TrainConfig,
    build_vocab,
    cl_loss,
    ccl_loss,
    evaluate,
    grad_check,
    grad_check_flat,
    init_params,
    load_params,
    mcqa_loss,
    mlm_loss,
    ocl_loss,
    pack,
    save_params,
    score_pair,
    softmax_grad,
    total_loss,
    total_loss_and_grads,
    train,
    unpack_params,
    zero_params,
)

LN4 = math.log(4.0)


def make_instance(orientation, query, candidates, gold, counterfactual=False):
    return ContrastiveInstance(
        orientation=orientation,
        query=query,
        candidates=tuple(candidates),
        gold=gold,
        meta=InstanceMeta(
            doc="d",
            pair=("a", "b"),
            path=("a", "m", "b"),
            counterfactual=counterfactual,
            replacements=(),
            strategy="donors=d:0",
            context_texts=(query,),
        ),
    )


def tiny_vocab(*texts):
    return build_vocab(texts)


def test_cl_loss_uniform():
    assert cl_loss(0.0, [0.0, 0.0, 0.0]) == pytest.approx(LN4, abs=1e-12)
    assert cl_loss(2.5, [2.5, 2.5, 2.5]) == pytest.approx(LN4, abs=1e-12)


def test_cl_loss_margin_one():
    assert cl_loss(1.0, [0.0]) == pytest.approx(math.log1p(math.exp(-1.0)), abs=1e-12)


def test_cl_loss_large_margin():
    expected = math.log1p(3.0 * math.exp(-20.0))  # ~6.18e-9
    assert cl_loss(20.0, [0.0, 0.0, 0.0]) == pytest.approx(expected, rel=1e-9)
    assert cl_loss(20.0, [0.0, 0.0, 0.0]) == pytest.approx(6.1834608e-09, rel=1e-6)


def test_cl_loss_properties():
    rng = random.Random(3)
    for _ in range(200):
        s_pos = rng.uniform(-5, 5)
        negs = [rng.uniform(-5, 5) for _ in range(rng.randint(1, 6))]
        loss = cl_loss(s_pos, negs)
        assert loss >= 0.0
        shift = rng.uniform(-10, 10)
        shifted = cl_loss(s_pos + shift, [s + shift for s in negs])
        assert shifted == pytest.approx(loss, abs=1e-12)
        better = cl_loss(s_pos + 0.5, negs)
        assert better < loss
    assert cl_loss(0.0, [0.0] * 3) == pytest.approx(LN4, abs=1e-12)
    with pytest.raises(ValueError):
        cl_loss(1.0, [])


def test_cl_loss_stable_at_extremes():
    assert math.isfinite(cl_loss(1000.0, [-1000.0, 900.0]))
    assert cl_loss(-1000.0, [1000.0]) == pytest.approx(2000.0, rel=1e-12)


def test_score_pair_zero_params_constant():
    params = zero_params(tiny_vocab("alpha beta gamma"), 4, 3)
    s1 = score_pair(params, "alpha beta", "gamma")
    s2 = score_pair(params, "totally different words", "here")
    assert s1 == s2 == 0.0


def test_score_pair_deterministic_and_token_sensitive():
    vocab = tiny_vocab("red green blue yellow purple")
    params = init_params(vocab, 8, 6, seed=5)
    a = score_pair(params, "red green", "blue")
    assert a == score_pair(params, "red green", "blue")
    changed = 0
    for other in ["yellow", "purple", "red", "green blue"]:
        changed += score_pair(params, "red green", other) != a
    assert changed == 4  # sampled non-collision: all differ under random params


def test_ocl_ccl_uniform():
    inst_o = make_instance("option", "some context", ["a", "b", "c", "d"], 2)
    inst_c = make_instance("context", "an answer", ["w", "x", "y", "z"], 0)
    params = zero_params(tiny_vocab("some context an answer a b c d w x y z"), 4, 3)
    assert ocl_loss(params, inst_o) == pytest.approx(LN4, abs=1e-12)
    assert ccl_loss(params, inst_c) == pytest.approx(LN4, abs=1e-12)
    with pytest.raises(ValueError):
        ocl_loss(params, inst_c)
    with pytest.raises(ValueError):
        ccl_loss(params, inst_o)


def test_cl_single_candidate_errors():
    inst = make_instance("option", "q", ["only"], 0)
    params = zero_params(tiny_vocab("q only"), 4, 3)
    with pytest.raises(ValueError):
        ocl_loss(params, inst)


def rigged_params():
    # One-dimensional rig: score(candidate) = tanh(mean embedding), with the
    # positive token placed at +2*atanh(0.5) and the negative at the mirror
    # point, so the score margin is exactly 1.
    vocab = {"[unk]": 0, "[sep]": 1, "pos": 2, "neg": 3}
    params = zero_params(vocab, 1, 1)
    x = 2.0 * math.atanh(0.5)
    params.embeddings[2, 0] = x
    params.embeddings[3, 0] = -x
    params.w1[0, 0] = 1.0
    params.w2[0] = 1.0
    return params


def test_ocl_rigged_margin():
    params = rigged_params()
    inst = make_instance("option", "", ["pos", "neg"], 0)
    assert score_pair(params, "", "pos") - score_pair(params, "", "neg") == pytest.approx(1.0, abs=1e-12)
    assert ocl_loss(params, inst) == pytest.approx(math.log1p(math.exp(-1.0)), abs=1e-9)


def test_ccl_mirrors_ocl_on_swapped_texts():
    vocab = tiny_vocab("alpha beta gamma delta")
    params = init_params(vocab, 6, 5, seed=11)
    option = make_instance("option", "alpha beta", ["gamma", "delta"], 1)
    context = make_instance("context", "alpha beta", ["gamma", "delta"], 1)
    assert ocl_loss(params, option) == pytest.approx(ccl_loss(params, context), abs=1e-12)


def test_ccl_rigged_margin():
    params = rigged_params()
    inst = make_instance("context", "", ["pos", "neg"], 0)
    assert ccl_loss(params, inst) == pytest.approx(math.log1p(math.exp(-1.0)), abs=1e-9)


def test_mlm_zero_rate_and_empty_text():
    params = init_params(tiny_vocab("one two three"), 4, 3, seed=1)
    assert mlm_loss(params, "one two three", 0.0, random.Random(0)) == 0.0
    with pytest.raises(ValueError):
        mlm_loss(params, "   ", 0.5, random.Random(0))
    with pytest.raises(ValueError):
        mlm_loss(params, "one", 1.5, random.Random(0))


def test_mlm_uniform_logits():
    words = " ".join(f"w{i}" for i in range(48))  # 48 words + 2 reserved = 50
    vocab = build_vocab([words])
    assert len(vocab) == 50
    params = zero_params(vocab, 4, 3)
    loss = mlm_loss(params, words, 0.25, random.Random(3))
    assert loss == pytest.approx(math.log(50.0), abs=1e-12)


def test_mlm_deterministic_under_seed():
    params = init_params(tiny_vocab("a b c d e f g h"), 6, 4, seed=2)
    losses = {mlm_loss(params, "a b c d e f g h", 0.4, random.Random(9)) for _ in range(5)}
    assert len(losses) == 1
    other = mlm_loss(params, "a b c d e f g h", 0.4, random.Random(10))
    assert other not in losses  # different mask pattern moves the loss


def test_total_loss_uniform_batches():
    texts = "ctx ans c1 c2 c3 c4"
    params = zero_params(tiny_vocab(texts), 4, 3)
    option = make_instance("option", "ctx", ["c1", "c2", "c3", "c4"], 1)
    context = make_instance("context", "ans", ["c1", "c2", "c3", "c4"], 3)
    assert total_loss(params, [option, option], mlm_weight=0.0) == pytest.approx(LN4, abs=1e-12)
    both = total_loss(params, [option, context], mlm_weight=0.0)
    assert both == pytest.approx(2 * LN4, abs=1e-12)
    with pytest.raises(ValueError):
        total_loss(params, [], mlm_weight=0.0)


def test_total_loss_recomposition():
    rng = random.Random(21)
    texts = ["north south east west up down left right charm strange"]
    vocab = build_vocab(texts)
    params = init_params(vocab, 8, 6, seed=7)
    words = texts[0].split()

    def rand_inst(orientation):
        q = " ".join(rng.sample(words, 3))
        cands = [" ".join(rng.sample(words, 2)) for _ in range(4)]
        return make_instance(orientation, q, cands, rng.randrange(4))

    batch = [rand_inst("option"), rand_inst("context"), rand_inst("option")]
    seed = 99
    w = 0.7
    total = total_loss(params, batch, mlm_weight=w, mask_rate=0.3, seed=seed)
    options = [b for b in batch if b.orientation == "option"]
    contexts = [b for b in batch if b.orientation == "context"]
    expected = sum(ocl_loss(params, b) for b in options) / len(options)
    expected += sum(ccl_loss(params, b) for b in contexts) / len(contexts)
    from pathcl.seeding import derive_rng

    mlm_terms = [
        mlm_loss(params, inst.query, 0.3, derive_rng(seed, "mlm", i))
        for i, inst in enumerate(batch)
    ]
    expected += w * sum(mlm_terms) / len(batch)
    assert total == pytest.approx(expected, abs=1e-12)


def test_mcqa_uniform_and_errors():
    params = zero_params(tiny_vocab("p q o1 o2 o3 o4"), 4, 3)
    ex = MCQAExample(passage="p", question="q", options=("o1", "o2", "o3", "o4"), gold=2)
    assert mcqa_loss(params, ex) == pytest.approx(LN4, abs=1e-12)
    with pytest.raises(ValueError):
        MCQAExample(passage="p", question="q", options=("o1", "o2"), gold=5)


def test_mcqa_matches_scalar_composition():
    vocab = tiny_vocab("museum opened early visitors waited quietly outside doors")
    params = init_params(vocab, 8, 6, seed=13)
    ex = MCQAExample(
        passage="museum opened early",
        question="visitors waited",
        options=("quietly", "outside doors", "early visitors", "museum"),
        gold=1,
    )
    query = "museum opened early [sep] visitors waited"
    scores = [score_pair(params, query, o) for o in ex.options]
    expected = cl_loss(scores[1], [scores[0], scores[2], scores[3]])
    assert mcqa_loss(params, ex) == pytest.approx(expected, abs=1e-12)


def test_grad_softmax_versus_finite_difference():
    rng = random.Random(17)
    scores = np.array([rng.uniform(-2, 2) for _ in range(5)])
    gold = 2

    def value_fn(vec):
        loss, _ = softmax_grad(vec, gold)
        return loss

    _, analytic = softmax_grad(scores, gold)
    err = grad_check_flat(value_fn, scores, analytic, h=1e-5, n_coords=5)
    assert err < 1e-7


def test_grad_total_loss():
    rng = random.Random(23)
    words = "ember quartz delta onyx maple cedar ridge stone".split()
    vocab = build_vocab([" ".join(words), "spare unused filler"])
    params = init_params(vocab, 5, 4, seed=3)

    def rand_inst(orientation):
        q = " ".join(rng.sample(words, 3))
        cands = [" ".join(rng.sample(words, 2)) for _ in range(3)]
        return make_instance(orientation, q, cands, rng.randrange(3))

    batch = [rand_inst("option"), rand_inst("context"), rand_inst("option")]

    def producer(p):
        return total_loss_and_grads(p, batch, mlm_weight=0.5, mask_rate=0.3, seed=4)

    err = grad_check(producer, params, h=1e-5, n_coords=250, seed=1)
    assert err < 1e-4

    # Without the embedding-tied masked-token term (whose softmax spans the
    # whole vocabulary), unused vocabulary rows have exactly zero gradient,
    # and the checker treats them as zero-vs-zero coordinates.
    def cl_only(p):
        return total_loss_and_grads(p, batch, mlm_weight=0.0)

    _, grads = cl_only(params)
    for token in ("spare", "unused", "filler"):
        row = vocab[token]
        assert np.all(grads["embeddings"][row] == 0.0)
    err = grad_check(cl_only, params, h=1e-5, n_coords=250, seed=2)
    assert err < 1e-4


def test_evaluate_chance_and_oracle():
    rng = random.Random(41)
    texts = "q c0 c1 c2 c3"
    vocab = tiny_vocab(texts)
    params = zero_params(vocab, 4, 3)
    instances = [
        make_instance("option", "q", ["c0", "c1", "c2", "c3"], rng.randrange(4))
        for _ in range(2000)
    ]
    acc = evaluate(params, instances)
    assert abs(acc - 0.25) < 0.04  # uniform scorer, argmax ties resolve to index 0

    rigged = rigged_params()
    oracle_insts = [make_instance("option", "", ["pos", "neg"], 0) for _ in range(10)]
    assert evaluate(rigged, oracle_insts) == 1.0

    hand = [
        make_instance("option", "", ["pos", "neg"], 0),
        make_instance("option", "", ["neg", "pos"], 0),  # gold scores lower
    ]
    assert evaluate(rigged, hand) == 0.5
    with pytest.raises(ValueError):
        evaluate(params, [])


def test_train_zero_learning_rate_keeps_params():
    insts = [make_instance("option", "alpha beta", ["gamma", "delta"], i % 2) for i in range(6)]
    cfg = TrainConfig(learning_rate=0.0, epochs=2, batch_size=2, seed=5, dim=4, hidden=3)
    params, metrics = train(insts, cfg)
    fresh = init_params(params.vocab, 4, 3, seed=5)
    assert np.array_equal(pack(params.arrays()), pack(fresh.arrays()))
    assert len(metrics) == 2


def test_train_same_seed_same_metrics():
    rng = random.Random(9)
    words = "lake river delta ocean pond creek".split()
    insts = [
        make_instance(
            rng.choice(["option", "context"]),
            " ".join(rng.sample(words, 2)),
            [" ".join(rng.sample(words, 2)) for _ in range(3)],
            rng.randrange(3),
        )
        for _ in range(12)
    ]
    cfg = TrainConfig(learning_rate=0.05, epochs=3, batch_size=4, seed=8, dim=6, hidden=4)
    _, m1 = train(insts, cfg)
    _, m2 = train(insts, cfg)
    assert m1 == m2
    with pytest.raises(ValueError):
        train([], cfg)


def test_params_save_load_round_trip(tmp_path):
    vocab = tiny_vocab("alpha beta gamma delta epsilon")
    params = init_params(vocab, 7, 5, seed=31)
    path = tmp_path / "scorer.txt"
    save_params(params, path)
    loaded = load_params(path)
    assert loaded.vocab == params.vocab
    for name, arr in params.arrays().items():
        assert np.array_equal(arr, loaded.arrays()[name]), name
    with pytest.raises(ValueError):
        load_params(__file__)


def test_pack_unpack_round_trip():
    params = init_params(tiny_vocab("x y z"), 3, 2, seed=1)
    vec = pack(params.arrays())
    back = unpack_params(params, vec)
    for name, arr in params.arrays().items():
        assert np.array_equal(arr, back.arrays()[name])
