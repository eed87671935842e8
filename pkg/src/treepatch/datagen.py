"""Seeded synthetic corpus generator with a Zipf long tail over classes.

Stands in for a real task-oriented corpus: each intent has a few query
templates mixing literal tokens and slot placeholders; slot fillers are
token sequences or nested intents (compositional values). Intent and filler
choices are Zipf-weighted so rare classes exist by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, Example
from .treebank import Node, ParseTree
from .utils import derive_seed


class GrammarError(ValueError):
    pass


class DepthExceeded(GrammarError):
    pass


@dataclass(frozen=True)
class Grammar:
    """intents: ordered (label, templates); template items are literal tokens
    or slot labels. fillers: slot label -> ordered alternatives, each either
    a token tuple or an intent label (nested subtree)."""

    intents: tuple  # ((intent_label, (template, ...)), ...)
    fillers: dict  # slot label -> tuple of alternatives
    max_depth: int = 3

    def __post_init__(self):
        if self.max_depth < 2:
            raise GrammarError("max_depth must be >= 2")
        labels = [label for label, _ in self.intents]
        if len(set(labels)) != len(labels):
            raise GrammarError("duplicate intent labels")
        for label, templates in self.intents:
            if not templates:
                raise GrammarError(f"{label} has no templates")
            for tpl in templates:
                for item in tpl:
                    if item.startswith("SL:") and item not in self.fillers:
                        raise GrammarError(f"{item} has no fillers")
        for slot, alts in self.fillers.items():
            if not alts:
                raise GrammarError(f"{slot} has no fillers")

    def intent_templates(self, label):
        for name, templates in self.intents:
            if name == label:
                return templates
        raise GrammarError(f"unknown intent {label}")

    def classes(self):
        out = set()
        for label, templates in self.intents:
            out.add(label)
            for tpl in templates:
                out.update(item for item in tpl if item.startswith("SL:"))
        for slot, alts in self.fillers.items():
            out.add(slot)
            for alt in alts:
                if isinstance(alt, str):
                    out.add(alt)
        return out


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    n_train: int = 5000
    n_test: int = 1000
    tail_exponent: float = 1.0

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 1:
            raise GrammarError("corpus sizes must be >= 1")
        if self.tail_exponent <= 0:
            raise GrammarError("tail_exponent must be > 0")


def zipf_weights(n, s):
    """Normalized 1/rank^s weights for n ordered alternatives."""
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def _sample_intent(grammar, label, rng, s, depth):
    if depth > grammar.max_depth:
        raise DepthExceeded(label)
    templates = grammar.intent_templates(label)
    tpl = templates[rng.choice(len(templates))]
    children = []
    for item in tpl:
        if not item.startswith("SL:"):
            children.append(item)
            continue
        alts = grammar.fillers[item]
        # nested fillers are unreachable once the depth budget is spent
        usable = [a for a in alts
                  if not isinstance(a, str) or depth + 2 <= grammar.max_depth]
        if not usable:
            raise DepthExceeded(item)
        weights = zipf_weights(len(alts), s)[[alts.index(a) for a in usable]]
        alt = usable[rng.choice(len(usable), p=weights / weights.sum())]
        if isinstance(alt, str):
            slot_children = (_sample_intent(grammar, alt, rng, s, depth + 2),)
        else:
            slot_children = tuple(alt)
        children.append(Node(item, slot_children))
    return Node(label, tuple(children))


def _sample_corpus(grammar, rng, n, s, id_prefix):
    weights = zipf_weights(len(grammar.intents), s)
    examples = []
    for i in range(n):
        label = grammar.intents[rng.choice(len(grammar.intents), p=weights)][0]
        tree = ParseTree(_sample_intent(grammar, label, rng, s, depth=1))
        query = " ".join(t for t in _leaves(tree.root))
        examples.append(Example(id=f"{id_prefix}:{i}", query=query, tree=tree))
    return Dataset(tuple(examples))


def _leaves(node):
    for child in node.children:
        if isinstance(child, str):
            yield child
        else:
            yield from _leaves(child)


def generate(grammar, config):
    """(train, test) datasets; disjoint seeded streams, disjoint id spaces."""
    train_rng = np.random.default_rng(derive_seed(config.seed, "datagen", "train"))
    test_rng = np.random.default_rng(derive_seed(config.seed, "datagen", "test"))
    s = config.tail_exponent
    train = _sample_corpus(grammar, train_rng, config.n_train, s, "train")
    test = _sample_corpus(grammar, test_rng, config.n_test, s, "test")
    return train, test


def load_grammar(path):
    """Grammar from JSON: {"max_depth": int, "intents": {label: [templates]},
    "fillers": {slot: [tokens-list | {"intent": label}]}}. Intent and filler
    order in the file is the Zipf rank order."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    intents = tuple(
        (label, tuple(tuple(tpl) for tpl in templates))
        for label, templates in data["intents"].items()
    )
    fillers = {}
    for slot, alts in data.get("fillers", {}).items():
        parsed = []
        for alt in alts:
            if isinstance(alt, dict):
                parsed.append(alt["intent"])
            else:
                parsed.append(tuple(alt))
        fillers[slot] = tuple(parsed)
    return Grammar(intents=intents, fillers=fillers, max_depth=data.get("max_depth", 3))


def builtin_grammar():
    """Fixed grammar: 12 intents, 30 slot classes, one compositional slot
    (SL:DESTINATION can hold a nested IN:GET_EVENT subtree)."""
    intents = (
        ("IN:GET_WEATHER", (
            ("what", "is", "the", "weather", "SL:DATE"),
            ("weather", "forecast", "for", "SL:LOCATION"),
            ("will", "it", "be", "SL:WEATHER_ATTRIBUTE", "SL:DATE"),
            ("how", "SL:WEATHER_ATTRIBUTE", "is", "it", "in", "SL:LOCATION"),
        )),
        ("IN:PLAY_MUSIC", (
            ("play", "SL:SONG", "by", "SL:ARTIST"),
            ("put", "on", "some", "SL:GENRE", "music"),
            ("play", "songs", "from", "SL:ARTIST"),
        )),
        ("IN:SET_ALARM", (
            ("set", "an", "alarm", "for", "SL:TIME"),
            ("wake", "me", "up", "SL:DATE", "at", "SL:TIME"),
        )),
        ("IN:GET_DIRECTIONS", (
            ("directions", "to", "SL:DESTINATION"),
            ("when", "should", "i", "leave", "for", "SL:DESTINATION", "at", "SL:TIME_ARRIVAL"),
            ("route", "from", "SL:SOURCE", "to", "SL:DESTINATION"),
        )),
        ("IN:GET_EVENT", (
            ("any", "SL:CATEGORY_EVENT", "events", "SL:DATE_EVENT"),
            ("find", "the", "SL:NAME_EVENT", "SL:CATEGORY_EVENT"),
            ("what", "events", "are", "happening", "SL:DATE_EVENT"),
            ("events", "hosted", "by", "SL:ORGANIZER_EVENT", "SL:DATE_EVENT"),
        )),
        ("IN:CREATE_REMINDER", (
            ("remind", "me", "to", "SL:TODO", "SL:REMINDER_DATE"),
            ("create", "a", "reminder", "to", "SL:TODO"),
        )),
        ("IN:SEND_MESSAGE", (
            ("text", "SL:RECIPIENT", "saying", "SL:MESSAGE_BODY"),
            ("send", "a", "message", "to", "SL:RECIPIENT"),
        )),
        ("IN:GET_RESTAURANT", (
            ("find", "a", "SL:CUISINE", "restaurant", "near", "SL:LOCATION_RESTAURANT"),
            ("show", "me", "SL:RATING", "rated", "places", "for", "SL:CUISINE"),
        )),
        ("IN:GET_TRAFFIC", (
            ("how", "is", "traffic", "on", "SL:ROAD"),
            ("traffic", "conditions", "SL:TRAFFIC_TIME", "on", "SL:ROAD"),
        )),
        ("IN:BOOK_FLIGHT", (
            ("book", "a", "SL:SEAT_CLASS", "flight", "on", "SL:AIRLINE"),
            ("find", "flights", "for", "SL:FLIGHT_DATE", "with", "SL:AIRLINE"),
        )),
        ("IN:GET_STOCK", (
            ("stock", "price", "of", "SL:TICKER"),
            ("how", "did", "SL:TICKER", "do", "SL:STOCK_DATE"),
        )),
        ("IN:CANCEL", (
            ("never", "mind"),
            ("cancel", "that"),
            ("stop", "please"),
        )),
    )
    fillers = {
        "SL:DATE": (("today",), ("tomorrow",), ("on", "friday"), ("next", "week")),
        "SL:LOCATION": (("boston",), ("seattle",), ("new", "york"), ("san", "francisco")),
        "SL:WEATHER_ATTRIBUTE": (("cold",), ("rainy",), ("windy",), ("humid",)),
        "SL:SONG": (("yesterday",), ("hey", "jude"), ("bohemian", "rhapsody")),
        "SL:ARTIST": (("the", "beatles"), ("queen",), ("miles", "davis")),
        "SL:GENRE": (("jazz",), ("rock",), ("classical",)),
        "SL:TIME": (("7", "am"), ("noon",), ("6:30", "pm")),
        "SL:DESTINATION": (
            ("the", "airport"),
            ("downtown",),
            ("the", "office"),
            "IN:GET_EVENT",  # compositional value
        ),
        "SL:SOURCE": (("home",), ("work",)),
        "SL:TIME_ARRIVAL": (("4", "pm"), ("9", "am"), ("half", "past", "five")),
        "SL:NAME_EVENT": (("dentist",), ("marathon",), ("gallery", "opening")),
        "SL:CATEGORY_EVENT": (("appointment",), ("concert",), ("festival",), ("workshop",)),
        "SL:DATE_EVENT": (("tonight",), ("this", "weekend"), ("in", "june")),
        "SL:ORGANIZER_EVENT": (("the", "city"), ("acme", "corp"), ("the", "library")),
        "SL:TODO": (("buy", "milk"), ("call", "mary"), ("water", "the", "plants")),
        "SL:REMINDER_DATE": (("tonight",), ("on", "monday"), ("in", "an", "hour")),
        "SL:RECIPIENT": (("mary",), ("my", "boss"), ("alex",)),
        "SL:MESSAGE_BODY": (("running", "late"), ("on", "my", "way"), ("see", "you", "soon")),
        "SL:CUISINE": (("thai",), ("italian",), ("mexican",)),
        "SL:RATING": (("highly",), ("five", "star"), ("top",)),
        "SL:LOCATION_RESTAURANT": (("here",), ("midtown",), ("the", "waterfront")),
        "SL:ROAD": (("the", "highway"), ("main", "street"), ("route", "9")),
        "SL:TRAFFIC_TIME": (("right", "now"), ("this", "evening")),
        "SL:SEAT_CLASS": (("economy",), ("business",)),
        "SL:AIRLINE": (("united",), ("delta",), ("jetblue",)),
        "SL:FLIGHT_DATE": (("next", "tuesday"), ("in", "march")),
        "SL:TICKER": (("acme",), ("globex",), ("initech",)),
        "SL:STOCK_DATE": (("today",), ("this", "quarter")),
    }
    return Grammar(intents=intents, fillers=fillers, max_depth=4)
