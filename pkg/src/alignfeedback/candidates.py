"""Caption tagging and misalignment-candidate extraction.

The built-in tagger is a deterministic lexicon + suffix-rule tagger; its rule
table is the contract (data files under data/lexicon/).  An external HTTP
tagger can be plugged in through the same backend protocol when higher
tagging quality matters more than hermeticity.

Candidate categories map from POS tags:
    noun -> object, adjective -> attribute, verb -> action,
    lexicon preposition -> relation.
"""
from __future__ import annotations

import random
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Dict, List, Optional, Protocol

from .core import MisalignmentType


class NoCandidates(ValueError):
    """Every candidate category is empty."""


class EmptyList(ValueError):
    """select_positive_caption got an empty caption list."""


class Pos(str, Enum):
    NOUN = "noun"
    ADJECTIVE = "adjective"
    VERB = "verb"
    PREPOSITION = "preposition"
    OTHER = "other"


POS_TO_CATEGORY = {
    Pos.NOUN: MisalignmentType.OBJECT,
    Pos.ADJECTIVE: MisalignmentType.ATTRIBUTE,
    Pos.VERB: MisalignmentType.ACTION,
    Pos.PREPOSITION: MisalignmentType.RELATION,
}

# Canonical category order for deterministic sampling.
CATEGORY_ORDER = (
    MisalignmentType.OBJECT,
    MisalignmentType.ATTRIBUTE,
    MisalignmentType.ACTION,
    MisalignmentType.RELATION,
)


@dataclass(frozen=True)
class TaggedToken:
    text: str
    pos: Pos
    char_start: int
    char_end: int


@dataclass(frozen=True)
class MisalignmentCandidate:
    category: MisalignmentType
    span: tuple  # (char_start, char_end)
    surface: str


class TaggerBackend(Protocol):
    def tag(self, caption: str) -> List[TaggedToken]: ...


def _load_wordlist(name: str) -> frozenset:
    path = resources.files("alignfeedback") / "data" / "lexicon" / name
    text = path.read_text("utf-8")
    return frozenset(line.strip().lower() for line in text.splitlines() if line.strip())


_WORD_RE = re.compile(r"[A-Za-z0-9']+")
_TOKEN_RE = re.compile(r"[A-Za-z0-9']+|[^\sA-Za-z0-9']+")


class LexiconTagger:
    """Deterministic rule-table tagger.

    Lookup precedence per word: stop-list, preposition lexicon (multi-word
    phrases matched longest-first), adjectives, verbs, nouns, then the suffix
    rules -ing/-ed -> verb and -ous/-ful/-ish -> adjective (length >= 5).
    Anything else, including punctuation, tags as other.
    """

    def __init__(self):
        self.nouns = _load_wordlist("nouns.txt")
        self.adjectives = _load_wordlist("adjectives.txt")
        self.verbs = _load_wordlist("verbs.txt")
        self.stopwords = _load_wordlist("stopwords.txt")
        preps = _load_wordlist("prepositions.txt")
        self.prepositions = frozenset(p for p in preps if " " not in p)
        self.phrase_prepositions = sorted(
            (tuple(p.split()) for p in preps if " " in p),
            key=len, reverse=True)

    def _word_pos(self, word: str) -> Pos:
        w = word.lower()
        if w in self.stopwords:
            return Pos.OTHER
        if w in self.prepositions:
            return Pos.PREPOSITION
        if w in self.adjectives:
            return Pos.ADJECTIVE
        if w in self.verbs:
            return Pos.VERB
        if w in self.nouns:
            return Pos.NOUN
        if len(w) >= 5:
            if w.endswith("ing") or w.endswith("ed"):
                return Pos.VERB
            if w.endswith(("ous", "ful", "ish")):
                return Pos.ADJECTIVE
        return Pos.OTHER

    def tag(self, caption: str) -> List[TaggedToken]:
        raw = [(m.start(), m.end(), m.group()) for m in _TOKEN_RE.finditer(caption)]
        tokens: List[TaggedToken] = []
        i = 0
        while i < len(raw):
            start, end, text = raw[i]
            matched_phrase = None
            if _WORD_RE.fullmatch(text):
                for phrase in self.phrase_prepositions:
                    k = len(phrase)
                    window = raw[i:i + k]
                    if len(window) < k:
                        continue
                    words = tuple(t[2].lower() for t in window)
                    if words == phrase:
                        matched_phrase = (start, window[-1][1])
                        break
            if matched_phrase:
                p_start, p_end = matched_phrase
                tokens.append(TaggedToken(caption[p_start:p_end], Pos.PREPOSITION,
                                          p_start, p_end))
                while i < len(raw) and raw[i][1] <= p_end:
                    i += 1
                continue
            if _WORD_RE.fullmatch(text):
                pos = self._word_pos(text)
            else:
                pos = Pos.OTHER
            tokens.append(TaggedToken(text, pos, start, end))
            i += 1
        return tokens


_DEFAULT_TAGGER: Optional[LexiconTagger] = None


def default_tagger() -> LexiconTagger:
    global _DEFAULT_TAGGER
    if _DEFAULT_TAGGER is None:
        _DEFAULT_TAGGER = LexiconTagger()
    return _DEFAULT_TAGGER


def tag_caption(caption: str, tagger: Optional[TaggerBackend] = None) -> List[TaggedToken]:
    """Tag a caption, enforcing the token-structure invariants.

    Tokens must be ordered, non-overlapping, slice the caption exactly, and
    jointly cover every non-whitespace character.
    """
    if not caption or not caption.strip():
        raise ValueError("caption must be non-empty")
    backend = tagger if tagger is not None else default_tagger()
    tokens = backend.tag(caption)
    covered = [False] * len(caption)
    prev_end = 0
    for tok in tokens:
        if tok.char_start < prev_end:
            raise ValueError("tagger produced overlapping or unordered tokens")
        if caption[tok.char_start:tok.char_end] != tok.text:
            raise ValueError(f"token text does not slice caption: {tok!r}")
        for j in range(tok.char_start, tok.char_end):
            covered[j] = True
        prev_end = tok.char_end
    for j, ch in enumerate(caption):
        if not ch.isspace() and not covered[j]:
            raise ValueError(f"non-whitespace char at {j} not covered by any token")
    return tokens


def extract_candidates(caption: str, tokens: List[TaggedToken]
                       ) -> Dict[MisalignmentType, List[MisalignmentCandidate]]:
    """One candidate per content token, keyed by category.

    All four categories are always present in the result (possibly empty).
    Stop-list words never become candidates even if a backend mis-tags them.
    """
    stop = default_tagger().stopwords
    out: Dict[MisalignmentType, List[MisalignmentCandidate]] = {
        cat: [] for cat in CATEGORY_ORDER}
    for tok in tokens:
        cat = POS_TO_CATEGORY.get(tok.pos)
        if cat is None:
            continue
        if tok.pos != Pos.PREPOSITION and tok.text.lower() in stop:
            continue
        out[cat].append(MisalignmentCandidate(
            category=cat, span=(tok.char_start, tok.char_end), surface=tok.text))
    return out


def sample_candidate(cands: Dict[MisalignmentType, List[MisalignmentCandidate]],
                     rng_seed: int) -> MisalignmentCandidate:
    """Uniform over non-empty categories, then uniform within the category.

    Pure function of (cands, rng_seed).
    """
    non_empty = [cat for cat in CATEGORY_ORDER if cands.get(cat)]
    if not non_empty:
        raise NoCandidates("no misalignment candidates in any category")
    rng = random.Random(rng_seed)
    cat = non_empty[rng.randrange(len(non_empty))]
    pool = cands[cat]
    return pool[rng.randrange(len(pool))]


def select_positive_caption(captions: List[str]) -> str:
    """Longest caption by character count; ties go to the first occurrence."""
    if not captions:
        raise EmptyList("no captions to select from")
    return max(captions, key=len)
