"""Token vocabulary, cloze queries, and JSONL dataset ingestion."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

PAD, UNK, CLS, SEP, MASK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
_SPECIAL_BY_UPPER = {t.upper(): t for t in SPECIAL_TOKENS}


def tokenize(text: str) -> list[str]:
    """Whitespace split, lowercased except for special-token forms."""
    out = []
    for piece in text.split():
        canonical = _SPECIAL_BY_UPPER.get(piece.upper())
        out.append(canonical if canonical is not None else piece.lower())
    return out


class Vocabulary:
    """Immutable token <-> id bijection with fixed special-token ids."""

    def __init__(self, tokens: list[str]):
        if tuple(tokens[:5]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the special tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self._tokens = tuple(tokens)
        self._ids = {t: i for i, t in enumerate(self._tokens)}

    @classmethod
    def from_corpus(cls, words) -> "Vocabulary":
        extra = sorted(set(words) - set(SPECIAL_TOKENS))
        return cls(list(SPECIAL_TOKENS) + extra)

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < len(self._tokens):
            raise ValueError(f"token id {idx} out of range for vocabulary size {len(self._tokens)}")
        return self._tokens[idx]

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens


def encode_query(text: str, vocab: Vocabulary) -> list[int]:
    """Tokenize and frame with [CLS]/[SEP]; unknown words become [UNK]."""
    if not text.strip():
        raise ValueError("encode_query: empty text")
    return [CLS] + [vocab.id_of(t) for t in tokenize(text)] + [SEP]


def decode_tokens(ids, vocab: Vocabulary) -> str:
    return " ".join(vocab.token_of(int(i)) for i in ids)


@dataclass(frozen=True)
class ClozeQuery:
    """A [CLS]/[SEP]-framed token sequence with one [MASK] and its answer."""

    tokens: tuple[int, ...]
    mask_index: int
    answer: int
    relation: str

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if self.tokens.count(MASK) != 1:
            raise ValueError(
                f"query must contain exactly one [MASK], got {self.tokens.count(MASK)}"
            )
        if not (0 <= self.mask_index < len(self.tokens)):
            raise ValueError("mask_index out of range")
        if self.tokens[self.mask_index] != MASK:
            raise ValueError("mask_index does not point at [MASK]")

    def __len__(self) -> int:
        return len(self.tokens)


def query_from_text(text: str, answer: str, relation: str, vocab: Vocabulary) -> ClozeQuery:
    ids = encode_query(text, vocab)
    return ClozeQuery(
        tokens=tuple(ids),
        mask_index=ids.index(MASK),
        answer=vocab.id_of(answer),
        relation=relation,
    )


@dataclass
class SkipReport:
    """Counts of records dropped (not errored) during JSONL ingestion."""

    total_lines: int = 0
    loaded: int = 0
    skipped_multi_token_answer: int = 0
    skipped_oov_answer: int = 0
    skipped_examples: list = field(default_factory=list)


def load_lama_jsonl(path, vocab: Vocabulary) -> tuple[list[ClozeQuery], SkipReport]:
    """Read cloze records: one JSON object per line with relation/query/answer.

    Multi-token or out-of-vocabulary answers are skipped and counted;
    structural problems (bad JSON, mask count != 1) raise with the line
    number.
    """
    queries: list[ClozeQuery] = []
    report = SkipReport()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            report.total_lines += 1
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"line {lineno}: malformed JSON ({e.msg})") from e
            try:
                relation, text, answer = (
                    record["relation"], record["query"], record["answer"],
                )
            except (KeyError, TypeError):
                raise ValueError(
                    f"line {lineno}: record must have relation/query/answer fields"
                ) from None
            mask_count = sum(1 for t in tokenize(text) if t == "[MASK]")
            if mask_count != 1:
                raise ValueError(
                    f"line {lineno}: query must contain exactly one [MASK], got {mask_count}"
                )
            answer_tokens = tokenize(answer)
            if len(answer_tokens) != 1:
                report.skipped_multi_token_answer += 1
                report.skipped_examples.append((lineno, answer))
                continue
            if answer_tokens[0] not in vocab:
                report.skipped_oov_answer += 1
                report.skipped_examples.append((lineno, answer))
                continue
            queries.append(query_from_text(text, answer_tokens[0], relation, vocab))
            report.loaded += 1
    return queries, report
