"""Shallow referring-expression parser.

Splits a token sequence into noun-phrase segments around relational
phrases (greedy left-to-right, longest match first), drops stopwords,
and extracts adjective-noun pairs inside each noun phrase.
"""
from __future__ import annotations

from dataclasses import dataclass, field

DEFAULT_RELATIONAL_PHRASES = (
    "below",
    "above",
    "between",
    "not",
    "behind",
    "under",
    "underneath",
    "front of",
    "right of",
    "left of",
    "ontop of",
    "next to",
    "middle of",
)

DEFAULT_STOPWORDS = frozenset({"the", "a", "an"})

SECTION_NAMES = ("relational", "stopwords", "adjectives", "nouns")


class LexiconError(Exception):
    """Bad lexicon definition or file."""


@dataclass(frozen=True)
class Lexicons:
    """Word lists driving segmentation and adj-noun pairing.

    Multiword relational phrases are stored as strings and matched as
    token sequences; adjective and noun sets must be disjoint.
    """

    relational_phrases: tuple[str, ...] = DEFAULT_RELATIONAL_PHRASES
    stopwords: frozenset[str] = DEFAULT_STOPWORDS
    adjectives: frozenset[str] = frozenset()
    nouns: frozenset[str] = frozenset()

    def __post_init__(self):
        overlap = set(self.adjectives) & set(self.nouns)
        if overlap:
            raise LexiconError(f"adjective and noun sets overlap: {sorted(overlap)}")

    def phrase_tokens(self) -> list[tuple[str, ...]]:
        return [tuple(p.split()) for p in self.relational_phrases]


@dataclass(frozen=True)
class NounPhrase:
    tokens: tuple[str, ...]
    adj_noun_pairs: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class RelPhrase:
    phrase: str

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(self.phrase.split())


@dataclass(frozen=True)
class ParsedExpression:
    """Alternating NounPhrase / RelPhrase segments, NP first and last."""

    segments: tuple[object, ...]

    @property
    def noun_phrases(self) -> tuple[NounPhrase, ...]:
        return tuple(s for s in self.segments if isinstance(s, NounPhrase))

    @property
    def relations(self) -> tuple[RelPhrase, ...]:
        return tuple(s for s in self.segments if isinstance(s, RelPhrase))

    def content_words(self) -> tuple[str, ...]:
        """All non-stopword tokens in order, relation phrases flattened."""
        out: list[str] = []
        for seg in self.segments:
            out.extend(seg.tokens)
        return tuple(out)


def extract_adj_noun_pairs(np_tokens, lexicons: Lexicons) -> tuple[tuple[str, str], ...]:
    """Pair each noun with every adjective preceding it without an
    intervening noun; tokens in no pair stay standalone words."""
    pairs: list[tuple[str, str]] = []
    pending_adjs: list[str] = []
    for tok in np_tokens:
        if tok in lexicons.nouns:
            pairs.extend((adj, tok) for adj in pending_adjs)
            pending_adjs = []
        elif tok in lexicons.adjectives:
            pending_adjs.append(tok)
    return tuple(pairs)


def _segment(tokens, lexicons: Lexicons):
    """Greedy longest-match scan into raw NP token lists and relation phrases."""
    phrases = lexicons.phrase_tokens()
    by_len = sorted({len(p) for p in phrases}, reverse=True)
    phrase_set = set(phrases)
    segments: list[object] = []
    current: list[str] = []
    i = 0
    n = len(tokens)
    while i < n:
        matched = None
        for length in by_len:
            if i + length <= n and tuple(tokens[i : i + length]) in phrase_set:
                matched = tuple(tokens[i : i + length])
                break
        if matched is not None:
            segments.append(current)
            segments.append(" ".join(matched))
            current = []
            i += len(matched)
        else:
            if tokens[i] not in lexicons.stopwords:
                current.append(tokens[i])
            i += 1
    segments.append(current)
    return segments


def parse(tokens, lexicons: Lexicons | None = None) -> ParsedExpression:
    """Parse tokens into NP/relation segments.

    A relational phrase flanked by an empty NP on its left (expression
    start, or back-to-back relations) is demoted: its tokens fold into
    that NP as ordinary words.  The same happens to a trailing relation,
    so the result always begins and ends with a noun phrase.
    """
    if not tokens:
        raise ValueError("cannot parse an empty token sequence")
    lexicons = lexicons if lexicons is not None else Lexicons()
    raw = _segment(tokens, lexicons)
    # raw alternates [np_tokens, phrase, np_tokens, ..., np_tokens]
    merged: list[object] = [list(raw[0])]
    for idx in range(1, len(raw), 2):
        phrase, np_tokens = raw[idx], raw[idx + 1]
        if merged[-1] == []:
            merged[-1].extend(phrase.split())
            merged[-1].extend(np_tokens)
        else:
            merged.append(phrase)
            merged.append(list(np_tokens))
    # Demote a trailing relation (empty final NP).
    while len(merged) >= 3 and merged[-1] == []:
        merged.pop()
        phrase = merged.pop()
        merged[-1].extend(phrase.split())
    segments: list[object] = []
    for seg in merged:
        if isinstance(seg, list):
            segments.append(
                NounPhrase(
                    tokens=tuple(seg),
                    adj_noun_pairs=extract_adj_noun_pairs(seg, lexicons),
                )
            )
        else:
            segments.append(RelPhrase(phrase=seg))
    return ParsedExpression(segments=tuple(segments))


def save_lexicons(lexicons: Lexicons, path) -> None:
    """Write a lexicon file: one entry per line under [section] headers."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("[relational]\n")
        for phrase in lexicons.relational_phrases:
            fh.write(phrase + "\n")
        fh.write("[stopwords]\n")
        for word in sorted(lexicons.stopwords):
            fh.write(word + "\n")
        fh.write("[adjectives]\n")
        for word in sorted(lexicons.adjectives):
            fh.write(word + "\n")
        fh.write("[nouns]\n")
        for word in sorted(lexicons.nouns):
            fh.write(word + "\n")


def load_lexicons(path) -> Lexicons:
    sections: dict[str, list[str]] = {name: [] for name in SECTION_NAMES}
    section = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            entry = line.strip()
            if not entry or entry.startswith("#"):
                continue
            if entry.startswith("[") and entry.endswith("]"):
                name = entry[1:-1]
                if name not in sections:
                    raise LexiconError(f"{path}:{lineno}: unknown section {name!r}")
                section = name
                continue
            if section is None:
                raise LexiconError(f"{path}:{lineno}: entry before any [section] header")
            sections[section].append(entry)
    return Lexicons(
        relational_phrases=tuple(sections["relational"]) or DEFAULT_RELATIONAL_PHRASES,
        stopwords=frozenset(sections["stopwords"]) or DEFAULT_STOPWORDS,
        adjectives=frozenset(sections["adjectives"]),
        nouns=frozenset(sections["nouns"]),
    )


def lexicons_jsonable(lexicons: Lexicons) -> dict:
    return {
        "relational": list(lexicons.relational_phrases),
        "stopwords": sorted(lexicons.stopwords),
        "adjectives": sorted(lexicons.adjectives),
        "nouns": sorted(lexicons.nouns),
    }


def lexicons_from_jsonable(obj: dict) -> Lexicons:
    return Lexicons(
        relational_phrases=tuple(obj["relational"]),
        stopwords=frozenset(obj["stopwords"]),
        adjectives=frozenset(obj["adjectives"]),
        nouns=frozenset(obj["nouns"]),
    )
