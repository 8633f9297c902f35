from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from wac.parsing import (
    Lexicons,
    LexiconError,
    NounPhrase,
    RelPhrase,
    extract_adj_noun_pairs,
    lexicons_from_jsonable,
    lexicons_jsonable,
    load_lexicons,
    parse,
    save_lexicons,
)

LEX = Lexicons(
    adjectives=frozenset({"large", "green", "red", "blue", "small"}),
    nouns=frozenset({"woman", "tree", "ball", "box", "dog", "cat", "fence", "lake"}),
)


def shapes(parsed):
    return [
        seg.phrase if isinstance(seg, RelPhrase) else list(seg.tokens)
        for seg in parsed.segments
    ]


def test_relational_segmentation_around_right_of():
    parsed = parse("the woman to the right of the tree".split(), LEX)
    assert shapes(parsed) == [["woman", "to"], "right of", ["tree"]]


def test_simple_np_has_no_relation():
    parsed = parse("the red ball".split(), LEX)
    assert shapes(parsed) == [["red", "ball"]]
    assert parsed.relations == ()


def test_multiple_relations_all_segmented():
    parsed = parse("dog next to cat behind fence".split(), LEX)
    assert shapes(parsed) == [["dog"], "next to", ["cat"], "behind", ["fence"]]


def test_longest_match_beats_single_token():
    lex = Lexicons(relational_phrases=("right", "right of"), adjectives=frozenset(), nouns=frozenset())
    parsed = parse("ball right of box".split(), lex)
    assert shapes(parsed) == [["ball"], "right of", ["box"]]
    # bare "right" still matches when "of" does not follow
    parsed = parse("ball right box".split(), lex)
    assert shapes(parsed) == [["ball"], "right", ["box"]]


def test_leading_relation_is_demoted():
    parsed = parse("next to the cat".split(), LEX)
    assert shapes(parsed) == [["next", "to", "cat"]]


def test_trailing_relation_is_demoted():
    parsed = parse("the dog next to".split(), LEX)
    assert shapes(parsed) == [["dog", "next", "to"]]


def test_back_to_back_relations_demote_the_second():
    parsed = parse("dog above below cat".split(), LEX)
    assert shapes(parsed) == [["dog"], "above", ["below", "cat"]]


def test_all_stopwords_yield_single_empty_np():
    parsed = parse(["the", "a", "an"], LEX)
    assert shapes(parsed) == [[]]


def test_parse_rejects_empty_input():
    with pytest.raises(ValueError):
        parse([], LEX)


def test_adj_noun_pairs_multiple_adjectives():
    assert extract_adj_noun_pairs(["large", "green", "tree"], LEX) == (
        ("large", "tree"),
        ("green", "tree"),
    )


def test_adj_noun_pairs_bare_noun():
    assert extract_adj_noun_pairs(["tree"], LEX) == ()


def test_adj_noun_pairs_reset_at_each_noun():
    assert extract_adj_noun_pairs(["red", "ball", "blue", "box"], LEX) == (
        ("red", "ball"),
        ("blue", "box"),
    )


def test_trailing_adjective_stays_unpaired():
    assert extract_adj_noun_pairs(["ball", "red"], LEX) == ()


WORD_POOL = ["the", "a", "woman", "tree", "red", "next", "to", "right", "of", "dog", "behind", "xyz"]


@given(st.lists(st.sampled_from(WORD_POOL), min_size=1, max_size=12))
def test_token_multiset_is_conserved(tokens):
    parsed = parse(tokens, LEX)
    kept = Counter(parsed.content_words())
    expected = Counter(t for t in tokens if t not in LEX.stopwords)
    assert kept == expected


@given(st.lists(st.sampled_from(WORD_POOL), min_size=1, max_size=12))
def test_segments_alternate_and_bookend_with_nps(tokens):
    parsed = parse(tokens, LEX)
    segs = parsed.segments
    assert isinstance(segs[0], NounPhrase)
    assert isinstance(segs[-1], NounPhrase)
    for a, b in zip(segs, segs[1:]):
        assert type(a) is not type(b)


def test_lexicon_overlap_rejected():
    with pytest.raises(LexiconError):
        Lexicons(adjectives=frozenset({"x"}), nouns=frozenset({"x"}))


def test_lexicon_file_round_trip(tmp_path):
    path = tmp_path / "lexicons.txt"
    save_lexicons(LEX, path)
    loaded = load_lexicons(path)
    assert loaded == LEX


def test_lexicon_jsonable_round_trip():
    assert lexicons_from_jsonable(lexicons_jsonable(LEX)) == LEX


def test_lexicon_file_bad_section(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("[nonsense]\nfoo\n", encoding="utf-8")
    with pytest.raises(LexiconError):
        load_lexicons(path)
