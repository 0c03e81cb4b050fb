"""Word-embedding tables, labeled datasets, and sentence point clouds.

A sentence is represented as the set of its unique in-vocabulary word
vectors together with normalized term-frequency weights (each weight is
the token count of the word divided by the sentence's total in-vocabulary
token count). Vectors are stored as float32; all distance work downstream
happens in float64.
"""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyCloudError, ParseError, EmapError

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


@dataclass(frozen=True)
class WordEmbeddingTable:
    """Vocabulary lookup plus an N x d matrix of word vectors."""

    vocab: dict
    vectors: np.ndarray

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[1] < 1:
            raise EmapError("embedding matrix must be N x d with d > 0")
        if len(self.vocab) != self.vectors.shape[0]:
            raise EmapError("vocabulary size does not match vector count")
        if not np.all(np.isfinite(self.vectors)):
            raise EmapError("embedding matrix contains non-finite components")
        self.vectors.setflags(write=False)

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __contains__(self, word) -> bool:
        return word in self.vocab

    def vector(self, word) -> np.ndarray:
        return self.vectors[self.vocab[word]]


@dataclass(frozen=True)
class LabeledDocument:
    """One labeled text document from a train or test split."""

    id: int
    label: str
    text: str
    split: str = "train"


@dataclass(frozen=True)
class SentenceCloud:
    """A sentence as unique word indices with normalized term-frequency weights."""

    doc_id: int
    word_indices: np.ndarray
    weights: np.ndarray
    length: int = field(default=0)

    def __post_init__(self):
        if self.word_indices.size < 1:
            raise EmptyCloudError(self.doc_id)
        if self.word_indices.size != np.unique(self.word_indices).size:
            raise EmapError(f"document {self.doc_id}: duplicate word indices in cloud")
        if np.any(self.weights <= 0.0):
            raise EmapError(f"document {self.doc_id}: non-positive cloud weight")
        if abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise EmapError(f"document {self.doc_id}: cloud weights do not sum to 1")
        self.word_indices.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def n_words(self) -> int:
        return self.word_indices.size


def _looks_like_header(fields) -> bool:
    # word2vec text convention: an optional first line "N d", both integers
    if len(fields) != 2:
        return False
    try:
        int(fields[0]), int(fields[1])
    except ValueError:
        return False
    return True


def load_embeddings(path, format="text") -> WordEmbeddingTable:
    """Parse a word-embedding file into a lookup table.

    The text format is one word per line, "word c1 ... cd" with whitespace
    separation, optionally preceded by an "N d" header line. The dimension
    is inferred from the first vector; rows of any other width are
    rejected. Later duplicates of a word keep the first occurrence.
    """
    if format != "text":
        raise EmapError(f"unsupported embedding format: {format!r}")
    vocab: dict = {}
    rows = []
    dim = None
    dropped = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if line_no == 1 and _looks_like_header(fields):
                continue
            if len(fields) < 2:
                raise ParseError(path, line_no, "expected a word followed by vector components")
            word = fields[0]
            try:
                vec = np.array(fields[1:], dtype=np.float32)
            except ValueError:
                raise ParseError(path, line_no, "non-numeric vector component") from None
            if not np.all(np.isfinite(vec)):
                raise ParseError(path, line_no, "non-finite vector component")
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise ParseError(
                    path, line_no, f"dimension mismatch: expected {dim}, got {vec.size}"
                )
            if word in vocab:
                dropped += 1
                continue
            vocab[word] = len(rows)
            rows.append(vec)
    if not rows:
        raise EmapError(f"{path}: no word vectors found")
    if dropped:
        logger.warning("%s: dropped %d duplicate word(s), kept first occurrences", path, dropped)
    return WordEmbeddingTable(vocab=vocab, vectors=np.vstack(rows))


def save_embeddings(table: WordEmbeddingTable, path) -> None:
    """Write the word2vec-style text format; round-trips bit-exactly through load."""
    words = sorted(table.vocab, key=table.vocab.get)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{table.size} {table.dim}\n")
        for word in words:
            comps = " ".join(format(float(c), ".9g") for c in table.vector(word))
            fh.write(f"{word} {comps}\n")


def load_dataset(path, split="train") -> list:
    """Load a "label<TAB>text" TSV; documents are numbered 0..n-1 in file order."""
    docs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if "\t" not in line:
                raise ParseError(path, line_no, "expected 'label<TAB>text'")
            label, text = line.split("\t", 1)
            if not label:
                raise ParseError(path, line_no, "empty label")
            if not text.strip():
                raise ParseError(path, line_no, "empty document text")
            docs.append(LabeledDocument(id=len(docs), label=label, text=text, split=split))
    return docs


def load_split_corpus(train_path, test_path) -> list:
    """Load train and test TSVs as one corpus with unique ids (test ids offset)."""
    train = load_dataset(train_path, split="train")
    test = load_dataset(test_path, split="test")
    offset = len(train)
    test = [
        LabeledDocument(id=d.id + offset, label=d.label, text=d.text, split="test")
        for d in test
    ]
    return train + test


def tokenize(text: str) -> list:
    """Lowercase and split on any non-alphanumeric character; empty tokens dropped."""
    return _TOKEN_RE.findall(text.lower())


def to_cloud(tokens, table: WordEmbeddingTable, doc_id: int) -> SentenceCloud:
    """Convert a token list into a weighted point cloud, dropping OOV tokens.

    Raises EmptyCloudError when no token is in the vocabulary.
    """
    counts = Counter(table.vocab[t] for t in tokens if t in table.vocab)
    if not counts:
        raise EmptyCloudError(doc_id)
    indices = np.array(sorted(counts), dtype=np.int64)
    total = sum(counts.values())
    weights = np.array([counts[i] for i in indices], dtype=np.float64) / total
    return SentenceCloud(doc_id=doc_id, word_indices=indices, weights=weights, length=total)


def build_clouds(docs, table: WordEmbeddingTable):
    """Tokenize documents into clouds; fully-OOV documents are skipped with a warning.

    Returns (clouds, kept_docs, skipped_ids); id alignment is preserved by
    reporting the skipped ids rather than renumbering.
    """
    clouds = []
    kept = []
    skipped = []
    for doc in docs:
        try:
            clouds.append(to_cloud(tokenize(doc.text), table, doc.id))
            kept.append(doc)
        except EmptyCloudError:
            skipped.append(doc.id)
    if skipped:
        logger.warning(
            "skipped %d document(s) with no in-vocabulary tokens: ids %s",
            len(skipped),
            skipped,
        )
    return clouds, kept, skipped
