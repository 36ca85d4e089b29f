"""Tokenization, hashed bag-of-words features, and an add-k n-gram LM.

The LM is the package's fluency scorer: it is fitted on the clean training
split of an experiment so that injected rare tokens score as surprising.
Feature hashing uses 64-bit FNV-1a over UTF-8 bytes, which keeps feature
indices bit-identical across platforms and backends.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, StateError, ValidationError
from .kernels import fnv1a_buckets

UNK = "<unk>"
BOS = "<s>"
EOS = "</s>"

# Word runs may contain internal hyphens/apostrophes ("well-shot", "don't");
# any other punctuation character becomes its own token.
_TOKEN_RE = re.compile(r"\w+(?:[-']\w+)*|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase and split into word and punctuation tokens."""
    return _TOKEN_RE.findall(text.lower())


def detokenize(tokens) -> str:
    return " ".join(tokens)


class Tokenizer:
    """Deterministic lowercasing word/punctuation tokenizer."""

    lowercase = True
    punctuation_splitting = True

    def tokenize(self, text: str) -> list[str]:
        return tokenize(text)

    def detokenize(self, tokens) -> str:
        return detokenize(tokens)


class Vocabulary:
    """Bijective token/index map with UNK pinned at index 0."""

    def __init__(self, tokens):
        self.index_to_token = [UNK] + sorted(set(tokens) - {UNK})
        self.token_to_index = {t: i for i, t in enumerate(self.index_to_token)}

    @classmethod
    def from_corpus(cls, token_lists) -> "Vocabulary":
        return cls(t for toks in token_lists for t in toks)

    def index(self, token: str) -> int:
        return self.token_to_index.get(token, 0)

    def words(self) -> list[str]:
        """All non-special tokens, in index order."""
        return self.index_to_token[1:]

    def __len__(self) -> int:
        return len(self.index_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_index


@dataclass(frozen=True)
class FeatureVector:
    """Dense hashed bag-of-words vector plus its pre-normalization L2 norm."""

    values: np.ndarray
    norm: float


class Featurizer:
    """Hashed token-count features, optionally TF-IDF weighted.

    dims must be a power of two >= 2. TF-IDF weighting requires fit_df()
    first; it multiplies counts by log((1 + N) / (1 + df)) + 1 and then
    L2-normalizes.
    """

    def __init__(self, dims: int = 2**14, weighting: str = "count"):
        if dims < 2 or dims & (dims - 1):
            raise ConfigError(f"dims must be a power of two >= 2, got {dims}")
        if weighting not in ("count", "tfidf"):
            raise ConfigError(f"weighting must be 'count' or 'tfidf', got {weighting!r}")
        self.dims = dims
        self.weighting = weighting
        self.idf = None

    def fit_df(self, token_lists) -> "Featurizer":
        """Fit the per-bucket document-frequency table used by TF-IDF."""
        df = np.zeros(self.dims)
        n_docs = 0
        for tokens in token_lists:
            n_docs += 1
            df[np.unique(fnv1a_buckets(tokens, self.dims))] += 1.0
        self.idf = np.log((1.0 + n_docs) / (1.0 + df)) + 1.0
        return self

    def _sparse_with_norm(self, tokens):
        if not tokens:
            return np.empty(0, dtype=np.int64), np.empty(0), 0.0
        idx, counts = np.unique(fnv1a_buckets(tokens, self.dims), return_counts=True)
        val = counts.astype(np.float64)
        if self.weighting == "tfidf":
            if self.idf is None:
                raise StateError("tfidf weighting requires fit_df() first")
            val = val * self.idf[idx]
        norm = math.sqrt(float(np.dot(val, val)))
        if self.weighting == "tfidf" and norm > 0.0:
            val = val / norm
        return idx, val, norm

    def sparse(self, tokens):
        """(bucket indices, weights) for one document, indices sorted unique."""
        idx, val, _ = self._sparse_with_norm(tokens)
        return idx, val

    def featurize(self, tokens) -> FeatureVector:
        idx, val, norm = self._sparse_with_norm(tokens)
        dense = np.zeros(self.dims)
        dense[idx] = val
        return FeatureVector(values=dense, norm=norm)

    def csr(self, token_lists):
        """Concatenated CSR arrays (indptr, idx, val) for a list of documents."""
        parts = [self.sparse(toks) for toks in token_lists]
        lengths = np.array([len(p[0]) for p in parts], dtype=np.int64)
        indptr = np.zeros(len(parts) + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        if parts:
            idx = np.concatenate([p[0] for p in parts])
            val = np.concatenate([p[1] for p in parts])
        else:
            idx, val = np.empty(0, dtype=np.int64), np.empty(0)
        return indptr, idx, val


class NGramLM:
    """Add-k smoothed n-gram language model over padded token streams.

    The predictive vocabulary is the corpus vocabulary plus UNK and the
    end marker; the start marker appears only in contexts. Conditional
    probabilities over the vocabulary therefore sum to exactly 1 for any
    context. Perplexity normalizes by len(tokens) + 1, counting the end
    marker as a predicted position.
    """

    def __init__(self, order: int, add_k: float, vocab=(), counts=None, context_totals=None):
        if order not in (2, 3):
            raise ConfigError(f"order must be 2 or 3, got {order}")
        if add_k <= 0.0:
            raise ConfigError(f"add_k must be > 0, got {add_k}")
        self.order = order
        self.add_k = add_k
        self.vocab = frozenset(vocab) | {UNK, EOS}
        self.counts = counts if counts is not None else {k: {} for k in range(1, order + 1)}
        self.context_totals = context_totals if context_totals is not None else {}

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def _map(self, token: str) -> str:
        if token == BOS:
            return BOS
        return token if token in self.vocab else UNK

    def cond_prob(self, context: tuple, token: str) -> float:
        context = tuple(self._map(t) for t in context)
        token = self._map(token)
        c = self.counts[self.order].get(context + (token,), 0)
        total = self.context_totals.get(context, 0)
        return (c + self.add_k) / (total + self.add_k * self.vocab_size)

    def perplexity(self, tokens) -> float:
        """exp of the average negative log-probability over len + 1 positions."""
        stream = [BOS] * (self.order - 1) + [self._map(t) for t in tokens] + [EOS]
        logp = 0.0
        for i in range(self.order - 1, len(stream)):
            logp += math.log(self.cond_prob(tuple(stream[i - self.order + 1 : i]), stream[i]))
        return math.exp(-logp / (len(tokens) + 1))

    def to_json(self) -> str:
        sep = "\x1f"
        return json.dumps(
            {
                "version": 1,
                "order": self.order,
                "add_k": self.add_k,
                "vocab": sorted(self.vocab),
                "counts": {
                    str(k): {sep.join(gram): c for gram, c in table.items()}
                    for k, table in self.counts.items()
                },
                "context_totals": {sep.join(ctx): c for ctx, c in self.context_totals.items()},
            }
        )

    @classmethod
    def from_json(cls, payload: str) -> "NGramLM":
        data = json.loads(payload)
        if data.get("version") != 1:
            raise ValidationError(f"unsupported LM file version {data.get('version')!r}")
        sep = "\x1f"
        counts = {
            int(k): {tuple(key.split(sep)): c for key, c in table.items()}
            for k, table in data["counts"].items()
        }
        totals = {tuple(key.split(sep)) if key else (): c for key, c in data["context_totals"].items()}
        return cls(data["order"], data["add_k"], data["vocab"], counts, totals)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "NGramLM":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def lm_fit(corpus, order: int = 2, add_k: float = 1.0) -> NGramLM:
    """Fit an NGramLM on a corpus of token lists."""
    corpus = list(corpus)
    if not corpus:
        raise ValidationError("corpus is empty")
    vocab = {t for tokens in corpus for t in tokens}
    lm = NGramLM(order=order, add_k=add_k, vocab=vocab)
    for tokens in corpus:
        stream = [BOS] * (order - 1) + list(tokens) + [EOS]
        for k in range(1, order + 1):
            table = lm.counts[k]
            for i in range(len(stream) - k + 1):
                gram = tuple(stream[i : i + k])
                table[gram] = table.get(gram, 0) + 1
        for i in range(order - 1, len(stream)):
            ctx = tuple(stream[i - order + 1 : i])
            lm.context_totals[ctx] = lm.context_totals.get(ctx, 0) + 1
    return lm


def perplexity(lm: NGramLM, tokens) -> float:
    return lm.perplexity(tokens)
