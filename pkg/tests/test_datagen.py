import numpy as np
import pytest

from treepatch import datagen
from treepatch.datagen import (GenConfig, Grammar, builtin_grammar, generate,
                               load_grammar, zipf_weights)
from treepatch.treebank import parse_top, serialize


def trivial_grammar():
    return Grammar(
        intents=(("IN:ONLY", (("fixed", "words", "SL:ONLY"),)),),
        fillers={"SL:ONLY": (("value",),)},
    )


def test_single_choice_grammar_is_constant():
    train, test = generate(trivial_grammar(), GenConfig(seed=0, n_train=5, n_test=2))
    texts = {serialize(ex.tree) for ex in train}
    assert texts == {"[IN:ONLY fixed words [SL:ONLY value ] ]"}
    assert {ex.id for ex in train}.isdisjoint({ex.id for ex in test})


def test_generation_deterministic():
    grammar = builtin_grammar()
    cfg = GenConfig(seed=11, n_train=200, n_test=50)
    a_train, a_test = generate(grammar, cfg)
    b_train, b_test = generate(grammar, cfg)
    assert [serialize(x.tree) for x in a_train] == [serialize(x.tree) for x in b_train]
    assert [serialize(x.tree) for x in a_test] == [serialize(x.tree) for x in b_test]


def test_zipf_intent_frequencies():
    # closed-form oracle: intent k has probability (1/k) / H_10
    intents = tuple((f"IN:I{k}", (("w", str(k)),)) for k in range(10))
    grammar = Grammar(intents=intents, fillers={})
    n = 5000
    train, _ = generate(grammar, GenConfig(seed=3, n_train=n, n_test=1))
    h10 = sum(1.0 / k for k in range(1, 11))
    counts = {label: 0 for label, _ in intents}
    for ex in train:
        counts[ex.tree.root.name] += 1
    for k, (label, _) in enumerate(intents, start=1):
        expect = (1.0 / k) / h10
        sigma = np.sqrt(n * expect * (1 - expect))
        assert abs(counts[label] - n * expect) <= 3 * sigma, (label, counts[label])


def test_compositional_values_appear():
    grammar = builtin_grammar()
    train, _ = generate(grammar, GenConfig(seed=5, n_train=1000, n_test=1))
    nested = [ex for ex in train if "SL:DESTINATION=[IN:" in _paths_str(ex.tree)]
    assert nested, "no compositional slot value in 1000 samples"


def _paths_str(tree):
    from treepatch.metrics import extract_paths
    return " | ".join(str(p) for p in extract_paths(tree))


def test_all_trees_satisfy_invariants():
    grammar = builtin_grammar()
    train, test = generate(grammar, GenConfig(seed=9, n_train=500, n_test=100))
    for ex in list(train) + list(test):
        assert parse_top(serialize(ex.tree)) == ex.tree
        assert ex.query.split() == [t for t in _leaves(ex.tree.root)]


def _leaves(node):
    for c in node.children:
        if isinstance(c, str):
            yield c
        else:
            yield from _leaves(c)


class TestBuiltinGrammar:
    def test_scale(self):
        grammar = builtin_grammar()
        intents = {c for c in grammar.classes() if c.startswith("IN:")}
        slots = {c for c in grammar.classes() if c.startswith("SL:")}
        assert len(intents) >= 10
        assert len(slots) >= 25

    def test_deterministic_construction(self):
        assert builtin_grammar() == builtin_grammar()

    def test_every_class_reachable(self):
        # census oracle: all declared classes appear in a 10k sample
        grammar = builtin_grammar()
        train, _ = generate(grammar, GenConfig(seed=1, n_train=10000, n_test=1))
        seen = set()
        for ex in train:
            seen |= ex.classes
        assert seen == grammar.classes()


def test_grammar_json_round_trip(tmp_path):
    import json
    path = tmp_path / "g.json"
    path.write_text(json.dumps({
        "max_depth": 4,
        "intents": {
            "IN:A": [["go", "to", "SL:X"]],
            "IN:B": [["see", "SL:Y"]],
        },
        "fillers": {
            "SL:X": [["home"], {"intent": "IN:B"}],
            "SL:Y": [["that"]],
        },
    }))
    grammar = load_grammar(path)
    train, _ = generate(grammar, GenConfig(seed=2, n_train=200, n_test=1))
    trees = {serialize(ex.tree) for ex in train}
    assert "[IN:A go to [SL:X home ] ]" in trees
    assert "[IN:A go to [SL:X [IN:B see [SL:Y that ] ] ] ]" in trees


def test_depth_budget_excludes_unreachable_nesting():
    grammar = Grammar(
        intents=(("IN:A", (("x", "SL:X"),)), ("IN:B", (("y",),))),
        fillers={"SL:X": (("flat",), "IN:B")},
        max_depth=2,
    )
    train, _ = generate(grammar, GenConfig(seed=0, n_train=100, n_test=1))
    in_a = [serialize(ex.tree) for ex in train if ex.tree.root.name == "IN:A"]
    assert in_a and set(in_a) == {"[IN:A x [SL:X flat ] ]"}


def test_no_token_fallback_raises():
    grammar = Grammar(
        intents=(("IN:A", (("x", "SL:X"),)), ("IN:B", (("y",),))),
        fillers={"SL:X": ("IN:B",)},
        max_depth=2,
    )
    with pytest.raises(datagen.DepthExceeded):
        generate(grammar, GenConfig(seed=0, n_train=10, n_test=1))


def test_zipf_weights_normalized():
    w = zipf_weights(10, 1.0)
    assert np.isclose(w.sum(), 1.0)
    assert np.isclose(w[0] / w[9], 10.0)
