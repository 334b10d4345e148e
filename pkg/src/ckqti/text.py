"""Tokenization, vocabulary, and the term embedding table."""

from __future__ import annotations

import hashlib
import logging
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from ckqti.tensor import Tensor, embedding

log = logging.getLogger(__name__)

PAD_ID = 0
OOV_ID = 1
PAD_TOKEN = "<pad>"
OOV_TOKEN = "<oov>"

_TOKEN_RE = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on every non-alphanumeric codepoint."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Dense term ids; 0 is padding, 1 is the shared out-of-vocabulary id."""

    def __init__(self, terms: Iterable[str], doc_freq: dict[str, int], num_docs: int):
        self.terms = [PAD_TOKEN, OOV_TOKEN, *terms]
        self.ids = {t: i for i, t in enumerate(self.terms)}
        self.doc_freq = dict(doc_freq)
        self.num_docs = num_docs

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, term: str) -> bool:
        return term in self.ids and self.ids[term] > OOV_ID

    def id(self, term: str) -> int:
        i = self.ids.get(term, OOV_ID)
        return OOV_ID if i == PAD_ID else i

    def encode(self, terms: Iterable[str]) -> list[int]:
        return [self.id(t) for t in terms]

    def dumps(self) -> str:
        lines = [f"#ckqti-vocab\t{self.num_docs}"]
        lines += [f"{t}\t{self.doc_freq[t]}" for t in self.terms[2:]]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("#ckqti-vocab\t"):
            raise ValueError("not a vocabulary file")
        num_docs = int(lines[0].split("\t")[1])
        terms, df = [], {}
        for line in lines[1:]:
            term, freq = line.split("\t")
            terms.append(term)
            df[term] = int(freq)
        return cls(terms, df, num_docs)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.loads(Path(path).read_text(encoding="utf-8"))

    def hash(self) -> bytes:
        return hashlib.sha256(self.dumps().encode("utf-8")).digest()


def build_vocab(docs: Iterable[Iterable[str]], min_df: int = 2) -> Vocabulary:
    """One streaming pass over tokenized documents."""
    df: Counter[str] = Counter()
    n = 0
    for tokens in docs:
        df.update(set(tokens))
        n += 1
    if n == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted(t for t, c in df.items() if c >= min_df)
    return Vocabulary(kept, {t: df[t] for t in kept}, n)


@dataclass
class TokenSequence:
    ids: list[int]
    original_length: int

    def __len__(self) -> int:
        return len(self.ids)


def truncate(ids: list[int], limit: int) -> TokenSequence:
    return TokenSequence(list(ids[:limit]), len(ids))


def init_embeddings(vocab_size: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    bound = 1.0 / np.sqrt(dim)
    table = rng.uniform(-bound, bound, size=(vocab_size, dim))
    table[PAD_ID] = 0.0
    return table


def load_vectors(path: str | Path, vocab: Vocabulary, table: np.ndarray) -> int:
    """Overwrite rows of ``table`` from a ``term v1 ... vdim`` text file.

    Returns the number of rows replaced; unknown terms are ignored.
    """
    dim = table.shape[1]
    replaced = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                log.warning("vector file line %d: expected %d values, skipped", lineno, dim)
                continue
            if parts[0] in vocab:
                table[vocab.id(parts[0])] = np.asarray(parts[1:], dtype=np.float64)
                replaced += 1
    return replaced


def embed(seq: TokenSequence | np.ndarray, table: Tensor) -> Tensor:
    ids = seq.ids if isinstance(seq, TokenSequence) else seq
    return embedding(table, np.asarray(ids, dtype=np.int64), PAD_ID)
