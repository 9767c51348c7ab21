"""Synthetic bilingual corpus: token inventories, feature synthesis,
secondary-language label masking, hotword lists, and JSONL persistence.

Utterances are mostly dominant-language (L1) tokens with embedded
multi-token secondary-language (L2) phrases drawn from a corpus-wide
entity pool. Every vocabulary entry owns a fixed signature vector; a
token's frames are that signature repeated for its duration plus i.i.d.
Gaussian noise. Everything is a pure function of the config, seed
included.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, InputError, ParseError, ProtocolError
from .tensor import Tensor

PAD_ID = 0
UNK_ID = 1
NO_BIAS_ID = 2
N_SPECIAL = 3

PAD_SURFACE = "<pad>"
UNK_SURFACE = "<unk>"
NO_BIAS_SURFACE = "<blank-of-bias>"


class Lang(str, Enum):
    L1 = "L1"
    L2 = "L2"
    SPECIAL = "SPECIAL"


@dataclass(frozen=True)
class Token:
    id: int
    surface: str
    lang: Lang


Phrase = tuple[Token, ...]

UNK_TOKEN = Token(UNK_ID, UNK_SURFACE, Lang.SPECIAL)
PAD_TOKEN = Token(PAD_ID, PAD_SURFACE, Lang.SPECIAL)


class Vocabulary:
    """Deterministic id layout: specials, then L1 entries, then L2 entries."""

    def __init__(self, l1_size: int, l2_size: int):
        if l1_size < 1 or l2_size < 1:
            raise ConfigError("both language inventories must be non-empty")
        self.l1_size = l1_size
        self.l2_size = l2_size
        self._tokens: list[Token] = [
            PAD_TOKEN,
            UNK_TOKEN,
            Token(NO_BIAS_ID, NO_BIAS_SURFACE, Lang.SPECIAL),
        ]
        for i in range(l1_size):
            self._tokens.append(Token(N_SPECIAL + i, f"zh{i:03d}", Lang.L1))
        for i in range(l2_size):
            self._tokens.append(Token(N_SPECIAL + l1_size + i, f"en{i:03d}", Lang.L2))
        self._by_surface = {t.surface: t for t in self._tokens}

    @property
    def size(self) -> int:
        return len(self._tokens)

    def token(self, token_id: int) -> Token:
        if not 0 <= token_id < self.size:
            raise InputError(f"token id {token_id} out of range [0, {self.size})")
        return self._tokens[token_id]

    def by_surface(self, surface: str) -> Token:
        try:
            return self._by_surface[surface]
        except KeyError:
            raise InputError(f"unknown surface {surface!r}") from None

    def l1_token(self, i: int) -> Token:
        return self._tokens[N_SPECIAL + i]

    def l2_token(self, i: int) -> Token:
        return self._tokens[N_SPECIAL + self.l1_size + i]


@dataclass
class Utterance:
    id: str
    tokens: tuple[Token, ...]
    features: Tensor
    durations: tuple[int, ...]

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    @property
    def ref_ids(self) -> list[int]:
        return [t.id for t in self.tokens]

    def l2_spans(self) -> list[tuple[int, int]]:
        """Maximal runs of L2 tokens as half-open (start, end) index pairs."""
        spans = []
        start = None
        for i, tok in enumerate(self.tokens):
            if tok.lang is Lang.L2:
                if start is None:
                    start = i
            elif start is not None:
                spans.append((start, i))
                start = None
        if start is not None:
            spans.append((start, len(self.tokens)))
        return spans


@dataclass(frozen=True)
class HotwordList:
    """One target L2 phrase plus N-1 distractor entities."""

    target: Phrase
    distractors: tuple[Phrase, ...]

    @property
    def n(self) -> int:
        return 1 + len(self.distractors)

    @property
    def phrases(self) -> tuple[Phrase, ...]:
        return (self.target,) + self.distractors


@dataclass
class CorpusConfig:
    n_train: int = 1200
    n_test: int = 80
    l1_vocab: int = 40
    l2_vocab: int = 30
    d_feat: int = 16
    duration_range: tuple[int, int] = (2, 4)
    noise_sigma: float = 0.1
    l2_phrase_rate: int = 1
    seed: int = 0
    # Synthesis knobs beyond the core set above.
    utt_len_range: tuple[int, int] = (4, 7)
    l1_phrase_rate: int = 1
    l1_phrase_len_range: tuple[int, int] = (1, 3)
    l2_phrase_len_range: tuple[int, int] = (2, 4)
    l1_pool: int = 50
    l2_pool: int = 70

    def __post_init__(self):
        for name in ("n_train", "n_test"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("l1_vocab", "l2_vocab", "d_feat", "l1_pool", "l2_pool"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.l2_phrase_rate < 1:
            raise ConfigError("l2_phrase_rate must be >= 1")
        for name in ("duration_range", "utt_len_range", "l1_phrase_len_range",
                     "l2_phrase_len_range"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ConfigError(f"{name} must satisfy 1 <= lo <= hi")

    def vocabulary(self) -> Vocabulary:
        return Vocabulary(self.l1_vocab, self.l2_vocab)

    @property
    def vocab_size(self) -> int:
        return N_SPECIAL + self.l1_vocab + self.l2_vocab


def mask_l1(labels: Sequence[Token]) -> tuple[Token, ...]:
    """Replace every L1 token with <unk>; L2 and specials pass through."""
    return tuple(UNK_TOKEN if t.lang is Lang.L1 else t for t in labels)


def expected_l2_fraction(config: CorpusConfig) -> float:
    """Expected share of L2 tokens per utterance implied by the config."""
    mean = lambda pair: (pair[0] + pair[1]) / 2.0
    l2 = config.l2_phrase_rate * mean(config.l2_phrase_len_range)
    l1 = mean(config.utt_len_range) + config.l1_phrase_rate * mean(config.l1_phrase_len_range)
    return l2 / (l1 + l2)


def _distinct_phrases(rng, pick_token, count: int, len_range: tuple[int, int],
                      n_types: int) -> list[Phrase]:
    lo, hi = len_range
    if sum(n_types ** k for k in range(lo, hi + 1)) < count:
        raise ConfigError(f"cannot build {count} distinct phrases from {n_types} tokens")
    out: list[Phrase] = []
    seen: set[tuple[int, ...]] = set()
    while len(out) < count:
        length = int(rng.integers(lo, hi + 1))
        phrase = tuple(pick_token(int(rng.integers(n_types))) for _ in range(length))
        key = tuple(t.id for t in phrase)
        if key in seen:
            continue
        seen.add(key)
        out.append(phrase)
    return out


def _synth_utterance(rng, config: CorpusConfig, vocab: Vocabulary,
                     signatures: np.ndarray, l1_entities: list[Phrase],
                     l2_entities: list[Phrase], utt_id: str) -> Utterance:
    base_len = int(rng.integers(config.utt_len_range[0], config.utt_len_range[1] + 1))
    base = [vocab.l1_token(int(i)) for i in rng.integers(config.l1_vocab, size=base_len)]

    # Splice in entity phrases. Distinct slot indices keep at least one
    # base token between any two spliced L2 phrases, so maximal L2 runs
    # recover the phrase spans exactly.
    n_insert = config.l1_phrase_rate + config.l2_phrase_rate
    if n_insert > base_len + 1:
        raise ConfigError("utt_len_range too small for the configured phrase rates")
    if config.l2_phrase_rate > len(l2_entities):
        raise ConfigError("l2_phrase_rate exceeds the entity pool size")
    slots = sorted(rng.choice(base_len + 1, size=n_insert, replace=False), reverse=True)
    l2_idx = rng.choice(len(l2_entities), size=config.l2_phrase_rate, replace=False)
    l1_idx = rng.choice(len(l1_entities), size=config.l1_phrase_rate, replace=True)
    inserts = [l2_entities[int(i)] for i in l2_idx] + [l1_entities[int(i)] for i in l1_idx]
    order = rng.permutation(n_insert)
    tokens = list(base)
    for slot, which in zip(slots, order):
        tokens[slot:slot] = list(inserts[int(which)])

    durations = tuple(int(d) for d in rng.integers(
        config.duration_range[0], config.duration_range[1] + 1, size=len(tokens)))
    n_frames = sum(durations)
    feats = np.empty((n_frames, config.d_feat))
    pos = 0
    for tok, dur in zip(tokens, durations):
        feats[pos:pos + dur] = signatures[tok.id]
        pos += dur
    if config.noise_sigma > 0:
        feats = feats + config.noise_sigma * rng.standard_normal(feats.shape)
    return Utterance(utt_id, tuple(tokens), Tensor(feats), durations)


def generate_corpus(config: CorpusConfig):
    """Build (train, test, entity_pool) deterministically from the config."""
    vocab = config.vocabulary()
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xC0]))
    signatures = rng.standard_normal((vocab.size, config.d_feat))
    l1_entities = _distinct_phrases(rng, vocab.l1_token, config.l1_pool,
                                    config.l1_phrase_len_range, config.l1_vocab)
    l2_entities = _distinct_phrases(rng, vocab.l2_token, config.l2_pool,
                                    config.l2_phrase_len_range, config.l2_vocab)
    pool = l1_entities + l2_entities

    train = [
        _synth_utterance(rng, config, vocab, signatures, l1_entities, l2_entities,
                         f"train-{i:05d}")
        for i in range(config.n_train)
    ]
    test = [
        _synth_utterance(rng, config, vocab, signatures, l1_entities, l2_entities,
                         f"test-{i:05d}")
        for i in range(config.n_test)
    ]
    return train, test, pool


def utterance_phrases(utt: Utterance) -> list[Phrase]:
    """The utterance's L2 phrases, one per maximal L2 run."""
    return [tuple(utt.tokens[s:e]) for s, e in utt.l2_spans()]


def build_hotword_list(utt: Utterance, entity_pool: Sequence[Phrase], n: int,
                       seed: int) -> HotwordList:
    """Target = the utterance's L2 phrase; distractors = seeded pool draws."""
    if n < 1:
        raise ConfigError("hotword list size must be >= 1")
    targets = utterance_phrases(utt)
    if not targets:
        raise ProtocolError(f"utterance {utt.id} has no L2 phrase to target")
    target = targets[0]
    target_key = tuple(t.id for t in target)
    candidates = [p for p in entity_pool if tuple(t.id for t in p) != target_key]
    if len(candidates) < n - 1:
        raise ConfigError(
            f"entity pool too small: need {n - 1} distractors, have {len(candidates)}"
        )
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA7]))
    chosen = rng.choice(len(candidates), size=n - 1, replace=False)
    return HotwordList(target, tuple(candidates[int(i)] for i in chosen))


def corpus_hotword_lists(utts: Sequence[Utterance], entity_pool: Sequence[Phrase],
                         n: int, seed: int) -> list[HotwordList]:
    """One deterministic hotword list per utterance."""
    seeds = np.random.default_rng(np.random.SeedSequence([seed, 0xB1])).integers(
        0, 2 ** 31 - 1, size=len(utts))
    return [build_hotword_list(u, entity_pool, n, int(s)) for u, s in zip(utts, seeds)]


# --- persistence ------------------------------------------------------------
#
# Corpus file: one JSON object per line with fields
#   {id, tokens: [{surface, lang}], durations: [int],
#    features: base64 little-endian float64, shape: [T, d_feat]}
# Entity pool file: one phrase per line, "L1:" / "L2:" prefix, tokens
# space-separated.


def utterance_to_record(utt: Utterance) -> str:
    feat = np.ascontiguousarray(utt.features.data, dtype="<f8")
    obj = {
        "id": utt.id,
        "tokens": [{"surface": t.surface, "lang": t.lang.value} for t in utt.tokens],
        "durations": list(utt.durations),
        "features": base64.b64encode(feat.tobytes()).decode("ascii"),
        "shape": list(feat.shape),
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def serialize_corpus(corpus: Iterable[Utterance]) -> str:
    lines = [utterance_to_record(u) for u in corpus]
    return "\n".join(lines) + ("\n" if lines else "")


def write_corpus(path, corpus: Iterable[Utterance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_corpus(corpus))


def _record_to_utterance(obj: dict, vocab: Vocabulary, line_no: int) -> Utterance:
    try:
        tokens = []
        for td in obj["tokens"]:
            tok = vocab.by_surface(td["surface"])
            if tok.lang.value != td["lang"]:
                raise ParseError(
                    f"line {line_no}: token {td['surface']!r} declared {td['lang']}, "
                    f"vocabulary says {tok.lang.value}"
                )
            tokens.append(tok)
        durations = tuple(int(d) for d in obj["durations"])
        shape = tuple(int(s) for s in obj["shape"])
        raw = base64.b64decode(obj["features"].encode("ascii"), validate=True)
        feats = np.frombuffer(raw, dtype="<f8")
        if feats.size != shape[0] * shape[1]:
            raise ParseError(f"line {line_no}: feature payload does not match shape {shape}")
        if sum(durations) != shape[0]:
            raise ParseError(f"line {line_no}: durations sum to {sum(durations)}, shape says {shape[0]}")
        feats = feats.reshape(shape).astype(np.float64)
        return Utterance(str(obj["id"]), tuple(tokens), Tensor(feats), durations)
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError, IndexError, InputError) as exc:
        raise ParseError(f"line {line_no}: malformed record ({exc})") from None


def parse_corpus(path, vocab: Vocabulary) -> list[Utterance]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {i}: invalid JSON ({exc.msg})") from None
            out.append(_record_to_utterance(obj, vocab, i))
    return out


def write_entity_pool(path, pool: Sequence[Phrase]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for phrase in pool:
            lang = phrase[0].lang.value
            fh.write(f"{lang}:{' '.join(t.surface for t in phrase)}\n")


def read_entity_pool(path, vocab: Vocabulary) -> list[Phrase]:
    pool = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if ":" not in line:
                raise ParseError(f"line {i}: expected 'L1:' or 'L2:' prefix")
            lang, rest = line.split(":", 1)
            if lang not in (Lang.L1.value, Lang.L2.value):
                raise ParseError(f"line {i}: unknown language tag {lang!r}")
            try:
                phrase = tuple(vocab.by_surface(s) for s in rest.split())
            except InputError as exc:
                raise ParseError(f"line {i}: {exc}") from None
            if not phrase:
                raise ParseError(f"line {i}: empty phrase")
            pool.append(phrase)
    return pool
