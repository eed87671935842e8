import numpy as np
import pytest

from treepatch import model as m
from treepatch.dataset import Dataset, Example
from treepatch.metrics import exact_match
from treepatch.model import (ChecksumError, EmptyQuery, TaggerModel,
                             TrainConfig, decode_tree, encode_targets,
                             featurize, forward, load_checkpoint,
                             loss_and_grad, predict, predict_trees,
                             save_checkpoint, train)
from treepatch.regularizers import FisherAccumulator, FreezeMask, RegConfig
from treepatch.treebank import parse_top, serialize, token_leaves

INTENTS = ("IN:A", "IN:B")
SLOTS = ("SL:X", "SL:Y")


def tiny_model(hidden_dim=0, feature_dim=64):
    return TaggerModel.init(INTENTS, SLOTS, feature_dim=feature_dim,
                            hidden_dim=hidden_dim, seed=3)


def example(eid, text):
    tree = parse_top(text)
    return Example(id=eid, query=" ".join(token_leaves(tree)), tree=tree)


class TestFeaturize:
    def test_deterministic(self):
        a = featurize("what is the weather", 128)
        b = featurize("what is the weather", 128)
        assert all((x == y).all() for x, y in zip(a, b))

    def test_empty_query(self):
        with pytest.raises(EmptyQuery):
            featurize("   ", 128)

    def test_feature_count_bounded(self):
        # at most 4 hashed features per token
        for query in ("a", "a b", "one two three four five"):
            feats = featurize(query, 1 << 20)
            assert len(feats) == len(query.split())
            assert all(1 <= len(f) <= 4 for f in feats)


class TestForward:
    @pytest.mark.parametrize("hidden", [0, 8])
    def test_distributions_sum_to_one(self, hidden):
        net = tiny_model(hidden)
        p_int, p_tag = forward(net, featurize("a b c", net.feature_dim))
        assert abs(p_int.sum() - 1) < 1e-9
        np.testing.assert_allclose(p_tag.sum(axis=1), 1.0, atol=1e-9)

    def test_zero_weights_give_uniform(self):
        net = tiny_model(0)
        p_int, p_tag = forward(net, featurize("a b", net.feature_dim))
        np.testing.assert_allclose(p_int, 1 / len(net.intents), atol=1e-12)
        np.testing.assert_allclose(p_tag, 1 / len(net.tags), atol=1e-12)

    def test_gradient_step_raises_true_class_probability(self):
        net = tiny_model(0)
        ex = example("e", "[IN:A hello [SL:X there ] ]")
        feats = featurize(ex.query, net.feature_dim)
        batch = [(feats, *encode_targets(net, ex))]
        before = forward(net, feats)[0][0]
        _, grad, _ = loss_and_grad(net, batch)
        net.theta.values -= 0.1 * grad.values
        after = forward(net, feats)[0][0]
        assert after > before


class TestLossAndGrad:
    def _batch(self, net):
        exs = [example("e0", "[IN:A hello [SL:X there world ] ]"),
               example("e1", "[IN:B go [SL:Y now ] fast ]")]
        return [(featurize(e.query, net.feature_dim), *encode_targets(net, e))
                for e in exs]

    def test_no_reg_is_pure_cross_entropy(self):
        net = tiny_model(0)
        batch = self._batch(net)
        loss, _, _ = loss_and_grad(net, batch)
        # zero weights: uniform predictions, CE = log n_int + log n_tags
        expected = np.log(len(net.intents)) + np.log(len(net.tags))
        assert abs(loss - expected) < 1e-9

    @pytest.mark.parametrize("hidden", [0, 4])
    def test_gradient_matches_finite_differences(self, hidden):
        net = tiny_model(hidden, feature_dim=13)
        if hidden == 0:
            rng = np.random.default_rng(0)
            net.theta.values[:] = rng.normal(0, 0.3, net.theta.values.size)
        batch = self._batch(net)
        prev = net.copy().theta
        prev.values += 0.1
        fisher = np.abs(np.random.default_rng(1).normal(size=prev.values.size))
        reg = RegConfig(kind="ewc", strength=0.7)
        _, grad, _ = loss_and_grad(net, batch, reg, prev, fisher)
        step = 1e-5
        for i in range(net.theta.values.size):
            saved = net.theta.values[i]
            net.theta.values[i] = saved + step
            hi = loss_and_grad(net, batch, reg, prev, fisher)[0]
            net.theta.values[i] = saved - step
            lo = loss_and_grad(net, batch, reg, prev, fisher)[0]
            net.theta.values[i] = saved
            fd = (hi - lo) / (2 * step)
            scale = max(abs(fd), abs(grad.values[i]), 1e-6)
            assert abs(grad.values[i] - fd) / scale <= 1e-4, i

    def test_huge_penalty_pins_weights(self):
        net = tiny_model(0)
        batch = self._batch(net)
        prev = net.copy().theta
        reg = RegConfig(kind="movenorm", strength=1e9)
        for _ in range(20):
            _, grad, _ = loss_and_grad(net, batch, reg, prev, None)
            net.theta.values -= 1e-10 * grad.values
        assert np.linalg.norm(net.theta.values - prev.values) < 1e-6

    def test_data_grad_excludes_penalty(self):
        net = tiny_model(0)
        batch = self._batch(net)
        prev = net.copy().theta
        prev.values += 1.0
        _, _, plain = loss_and_grad(net, batch)
        _, total, data = loss_and_grad(
            net, batch, RegConfig(kind="movenorm", strength=2.0), prev, None)
        np.testing.assert_array_equal(data.values, plain.values)
        assert not np.array_equal(total.values, data.values)


class TestDecode:
    def test_all_o_gives_slotless_tree(self):
        tree = decode_tree("never mind", "IN:A", ["O", "O"])
        assert serialize(tree) == "[IN:A never mind ]"

    def test_bio_run_becomes_slot(self):
        tree = decode_tree("x today now", "IN:A", ["O", "B-SL:X", "I-SL:X"])
        assert serialize(tree) == "[IN:A x [SL:X today now ] ]"

    def test_orphan_i_tag_repaired_to_b(self):
        tree = decode_tree("a b", "IN:A", ["O", "I-SL:X"])
        assert serialize(tree) == "[IN:A a [SL:X b ] ]"

    def test_leaves_always_match_query(self):
        rng = np.random.default_rng(5)
        net = tiny_model(0)
        tags = net.tags
        for _ in range(100):
            query = " ".join(f"t{rng.integers(0, 9)}"
                             for _ in range(rng.integers(1, 8)))
            tag_seq = [tags[rng.integers(0, len(tags))] for _ in query.split()]
            tree = decode_tree(query, "IN:A", tag_seq)
            assert list(token_leaves(tree)) == query.split()


def toy_corpus():
    # linearly separable: intent and slots are determined by the tokens
    texts = []
    for i in range(30):
        texts.append(f"[IN:A alpha w{i % 3} [SL:X xval{i % 2} ] ]")
        texts.append(f"[IN:B beta q{i % 3} [SL:Y yval{i % 2} ] ]")
    return Dataset(tuple(example(f"e{j}", t) for j, t in enumerate(texts)))


def simple_plan(by_id, seed):
    ids = sorted(by_id)

    def plan_fn(epoch):
        rng = np.random.default_rng(seed + epoch)
        return [ids[i] for i in rng.permutation(len(ids))]

    return plan_fn


def em_evaluator(examples):
    gold = [e.tree for e in examples]

    def evaluator(net):
        return {"em": exact_match(gold, predict_trees(net, examples))}

    return evaluator


class TestTrain:
    def test_learns_separable_data(self):
        corpus = toy_corpus()
        net = tiny_model(0, feature_dim=512)
        by_id = {e.id: e for e in corpus}
        result = train(net, by_id, simple_plan(by_id, 0),
                       TrainConfig(lr=0.5, batch_size=8, max_epochs=30,
                                   eval_every=50, patience=10),
                       em_evaluator(list(corpus)))
        assert result.history[-1]["em"] >= 0.95

    def test_zero_lr_keeps_weights_but_accumulates_fisher(self):
        corpus = toy_corpus()
        net = tiny_model(0, feature_dim=256)
        before = net.theta.values.copy()
        by_id = {e.id: e for e in corpus}
        acc = FisherAccumulator(net.layout)
        result = train(net, by_id, simple_plan(by_id, 0),
                       TrainConfig(lr=0.0, batch_size=16, max_epochs=1,
                                   eval_every=0, patience=10),
                       em_evaluator(list(corpus)), fisher_acc=acc)
        np.testing.assert_array_equal(net.theta.values, before)
        assert acc.steps == result.total_steps > 0
        assert acc.fisher().sum() > 0

    def test_deterministic(self):
        corpus = toy_corpus()
        by_id = {e.id: e for e in corpus}
        outs = []
        for _ in range(2):
            net = tiny_model(0, feature_dim=256)
            result = train(net, by_id, simple_plan(by_id, 1),
                           TrainConfig(lr=0.3, batch_size=8, max_epochs=3,
                                       eval_every=10, patience=10),
                           em_evaluator(list(corpus)))
            outs.append((result.best.theta_values.copy(), tuple(
                r["em"] for r in result.history)))
        np.testing.assert_array_equal(outs[0][0], outs[1][0])
        assert outs[0][1] == outs[1][1]

    def test_full_freeze_keeps_theta_bit_identical(self):
        corpus = toy_corpus()
        net = tiny_model(0, feature_dim=256)
        before = net.theta.values.copy()
        by_id = {e.id: e for e in corpus}
        train(net, by_id, simple_plan(by_id, 0),
              TrainConfig(lr=0.5, batch_size=8, max_epochs=1, eval_every=0,
                          patience=10,
                          freeze=FreezeMask.of("encoder", "intent_head", "tag_head")),
              em_evaluator(list(corpus)))
        np.testing.assert_array_equal(net.theta.values, before)


class TestCheckpoint:
    def _trained(self):
        corpus = toy_corpus()
        net = tiny_model(0, feature_dim=256)
        by_id = {e.id: e for e in corpus}
        result = train(net, by_id, simple_plan(by_id, 0),
                       TrainConfig(lr=0.5, batch_size=8, max_epochs=3,
                                   eval_every=20, patience=10),
                       em_evaluator(list(corpus)))
        return result, corpus

    def test_round_trip_bit_exact(self, tmp_path):
        result, _ = self._trained()
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(result.best, p1)
        loaded = load_checkpoint(p1)
        save_checkpoint(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()
        np.testing.assert_array_equal(loaded.theta_values, result.best.theta_values)
        np.testing.assert_array_equal(loaded.fisher_sum_sq, result.best.fisher_sum_sq)
        assert loaded.fisher_steps == result.best.fisher_steps == result.best.step

    def test_corrupt_file_rejected(self, tmp_path):
        result, _ = self._trained()
        path = tmp_path / "c.ckpt"
        save_checkpoint(result.best, path)
        blob = bytearray(path.read_bytes())
        blob[-1] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(ChecksumError):
            load_checkpoint(path)
        (tmp_path / "junk").write_bytes(b"not a checkpoint")
        with pytest.raises(ChecksumError):
            load_checkpoint(tmp_path / "junk")

    def test_loaded_model_reproduces_metrics(self, tmp_path):
        result, corpus = self._trained()
        path = tmp_path / "d.ckpt"
        save_checkpoint(result.best, path)
        net = load_checkpoint(path).model()
        em = em_evaluator(list(corpus))(net)["em"]
        best_record = [r for r in result.history
                       if r["step"] == result.best.step]
        assert best_record and best_record[-1]["em"] == em


def test_predict_emits_valid_trees():
    net = tiny_model(0)
    tree = predict(net, "hello out there")
    assert serialize(tree)
    assert list(token_leaves(tree)) == "hello out there".split()
