import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from craftvla.action_codec import ActionEvent, all_surfaces, encode_action, mu_law_decode
from craftvla.errors import VocabError, VocabLookupError
from craftvla.token_vocab import (
    ActionTokenVocab,
    BaseVocabStats,
    Binding,
    Strategy,
    build_vocab,
    ids_to_surfaces,
    ids_to_tokens,
    load_vocab,
    serialize_vocab,
    tokens_to_ids,
)


def stats_from(freqs, vocab_size=None):
    entries = tuple((i, f"tok{i}", f) for i, f in enumerate(freqs))
    return BaseVocabStats(entries, vocab_size or len(freqs))


def random_stats(rng, n):
    return stats_from([rng.randint(0, 20) for _ in range(n)], n + rng.randint(0, 5))


def test_repurpose_picks_smallest_frequencies():
    vocab = build_vocab(stats_from([5, 1, 3]), Strategy.REPURPOSE, ["<|a|>", "<|b|>"])
    assert [b.id for b in vocab.bindings] == [1, 2]
    assert [b.replaced_surface for b in vocab.bindings] == ["tok1", "tok2"]
    assert {b.origin for b in vocab.bindings} == {"repurposed"}


def test_append_is_contiguous():
    surfaces = [f"<|t{i}|>" for i in range(62)]
    vocab = build_vocab(BaseVocabStats((), 151646), "append", surfaces)
    assert [b.id for b in vocab.bindings] == list(range(151646, 151708))
    assert vocab.total_vocab_size == 151708


def test_tie_break_prefers_larger_id():
    vocab = build_vocab(stats_from([2, 1, 1, 1]), "repurpose", ["<|a|>", "<|b|>"])
    assert [b.id for b in vocab.bindings] == [3, 2]


def test_insufficient_entries():
    with pytest.raises(VocabError):
        build_vocab(stats_from([1, 2]), "repurpose", ["<|a|>", "<|b|>", "<|c|>"])


def test_duplicate_surfaces():
    with pytest.raises(VocabError):
        build_vocab(stats_from([1, 2, 3]), "repurpose", ["<|a|>", "<|a|>"])


def test_stats_validation():
    with pytest.raises(VocabError):
        BaseVocabStats(((0, "a", 1), (0, "b", 2)), 2)
    with pytest.raises(VocabError):
        BaseVocabStats(((0, "a", -1),), 1)
    with pytest.raises(VocabError):
        BaseVocabStats(((5, "a", 1),), 3)


def test_random_tables_match_sort_oracle():
    rng = random.Random(11)
    for _ in range(200):
        n = rng.randint(5, 80)
        stats = random_stats(rng, n)
        k = rng.randint(1, n)
        vocab = build_vocab(stats, "repurpose", [f"<|s{i}|>" for i in range(k)])
        # oracle: full sort of (frequency, -id), take k
        ranked = sorted(stats.entries, key=lambda e: (e[2], -e[0]))
        assert {b.id for b in vocab.bindings} == {e[0] for e in ranked[:k]}
        chosen = {b.id for b in vocab.bindings}
        freq = {e[0]: e[2] for e in stats.entries}
        worst_chosen = max(freq[i] for i in chosen)
        assert all(freq[i] >= worst_chosen for i in freq if i not in chosen)


def test_default_surfaces_cover_grammar():
    vocab = build_vocab(stats_from(list(range(200))), "repurpose")
    assert [b.surface for b in vocab.bindings] == all_surfaces()
    assert len(vocab.bindings) == 63
    assert vocab.covers(all_surfaces())


# ------------------------------------------------------------ serialization


@pytest.fixture
def fixture_vocab():
    return build_vocab(stats_from([(i * 37) % 101 for i in range(300)], 320), "repurpose")


def test_round_trip(fixture_vocab):
    text = serialize_vocab(fixture_vocab)
    assert load_vocab(text) == fixture_vocab
    assert serialize_vocab(load_vocab(text)) == text


def test_round_trip_append():
    vocab = build_vocab(BaseVocabStats((), 1000), "append")
    assert load_vocab(serialize_vocab(vocab)) == vocab


def test_minimal_document():
    doc = '{"strategy": "append", "base_vocab_size": 10, "bindings": [{"surface": "<|use|>", "id": 10, "origin": "appended"}]}'
    vocab = load_vocab(doc)
    assert vocab.bindings == (Binding("<|use|>", 10, "appended"),)


def test_colliding_id_names_both_surfaces(fixture_vocab):
    doc = json.loads(serialize_vocab(fixture_vocab))
    doc["bindings"][5]["id"] = doc["bindings"][2]["id"]
    with pytest.raises(VocabError) as info:
        load_vocab(json.dumps(doc))
    msg = str(info.value)
    assert doc["bindings"][5]["surface"] in msg and doc["bindings"][2]["surface"] in msg


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d.update(extra=1),
        lambda d: d["bindings"][0].update(note="x"),
        lambda d: d.update(strategy="shuffle"),
        lambda d: d["bindings"][0].update(id=10_000),  # outside base range under repurpose
        lambda d: d["bindings"][0].update(id="3"),
        lambda d: d.pop("base_vocab_size"),
        lambda d: d["bindings"][0].update(origin="appended"),
    ],
)
def test_schema_violations(fixture_vocab, mutate):
    doc = json.loads(serialize_vocab(fixture_vocab))
    mutate(doc)
    with pytest.raises(VocabError):
        load_vocab(json.dumps(doc))


def test_append_gap_rejected():
    bindings = (Binding("<|a|>", 10, "appended"), Binding("<|b|>", 12, "appended"))
    with pytest.raises(VocabError):
        ActionTokenVocab(Strategy.APPEND, bindings, 10)


# ------------------------------------------------------------------ lookup


def test_bread_frame_round_trip(fixture_vocab):
    e = ActionEvent(frozenset({"use"}), (mu_law_decode(3), mu_law_decode(2)))
    tokens = encode_action(e)
    ids = tokens_to_ids(fixture_vocab, tokens)
    assert ids_to_tokens(fixture_vocab, ids) == tokens
    surfaces = ["<|action_begin|>", "<|use|>", "<|cam_w_3|>", "<|cam_h_2|>", "<|action_end|>"]
    assert ids_to_surfaces(fixture_vocab, ids) == surfaces
    assert ids == [fixture_vocab.id_of(s) for s in surfaces]


def test_unbound_lookups(fixture_vocab):
    unused = max(b.id for b in fixture_vocab.bindings) + 1
    while unused in {b.id for b in fixture_vocab.bindings}:
        unused += 1
    with pytest.raises(VocabLookupError) as info:
        ids_to_tokens(fixture_vocab, [unused])
    assert info.value.value == unused
    with pytest.raises(VocabLookupError):
        tokens_to_ids(fixture_vocab, ["<|drop|>"])


@given(st.lists(st.sampled_from(all_surfaces()), max_size=40))
def test_inverse_pair(surfaces):
    vocab = build_vocab(BaseVocabStats((), 5000), "append")
    assert ids_to_surfaces(vocab, tokens_to_ids(vocab, surfaces)) == surfaces
