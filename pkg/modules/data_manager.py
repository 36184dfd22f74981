# modules/data_manager.py

import csv
import io
import logging
import os
import re
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, model_validator

from config.app_config import AppConfig
from modules.errors import DataError, DataFormatError, InputError

logger = logging.getLogger(__name__)

WORD_PATTERN = re.compile(r"\w+|[^\w\s]", re.UNICODE)
STSB_FULL_COLUMNS = 7
STSB_MIN_COLUMNS = 3
NLI_FIELDS = ('gold_label', 'sentence1', 'sentence2')


class SentencePair(BaseModel):
    """Two raw sentences with either an STS score in [0, 5] or an NLI label"""
    model_config = ConfigDict(frozen=True)

    sentence_a: str
    sentence_b: str
    score: Optional[float] = None
    label: Optional[str] = None

    @model_validator(mode="after")
    def check_label(self):
        if (self.score is None) == (self.label is None):
            raise DataError("A sentence pair carries exactly one of score or label")
        if self.score is not None and not AppConfig.MIN_SCORE <= self.score <= AppConfig.MAX_SCORE:
            raise DataError(f"Score {self.score} outside [0, 5]")
        if self.label is not None and self.label not in AppConfig.NLI_LABELS:
            raise DataError(f"Unknown NLI label '{self.label}'")
        return self

    @property
    def label_id(self) -> Optional[int]:
        return None if self.label is None else AppConfig.NLI_LABELS[self.label]


@dataclass(frozen=True)
class TokenizedBatch:
    """Token ids [B, T] with attention mask [B, T] (1 = real token, 0 = [PAD])"""
    ids: np.ndarray
    mask: np.ndarray
    segments: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.ids.shape != self.mask.shape or self.ids.ndim != 2:
            raise InputError(f"ids {self.ids.shape} and mask {self.mask.shape} must be equal 2-D shapes")

    @property
    def batch_size(self) -> int:
        return self.ids.shape[0]

    @property
    def steps(self) -> int:
        return self.ids.shape[1]

    def select(self, rows: np.ndarray) -> "TokenizedBatch":
        segments = None if self.segments is None else self.segments[rows]
        return TokenizedBatch(self.ids[rows], self.mask[rows], segments)

    @classmethod
    def stack(cls, rows: Sequence[Tuple[np.ndarray, np.ndarray]]) -> "TokenizedBatch":
        ids = np.stack([r[0] for r in rows]).astype(np.int64)
        mask = np.stack([r[1] for r in rows]).astype(np.int8)
        return cls(ids, mask)


class Vocab:
    """Word-level vocabulary; ids 0-3 are reserved, lookup of unknown words gives [UNK]"""

    def __init__(self, words: Iterable[str] = (), lowercase: bool = True):
        self.lowercase = lowercase
        self.tokens: List[str] = list(AppConfig.RESERVED_TOKENS)
        self.token_to_id: Dict[str, int] = {t: i for i, t in enumerate(self.tokens)}
        for word in words:
            if word not in self.token_to_id:
                self.token_to_id[word] = len(self.tokens)
                self.tokens.append(word)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, word: str):
        return word in self.token_to_id

    def lookup(self, word: str) -> int:
        return self.token_to_id.get(word, AppConfig.UNK_ID)

    @property
    def words(self) -> List[str]:
        return self.tokens[len(AppConfig.RESERVED_TOKENS):]

    @classmethod
    def from_file(cls, path: str, lowercase: bool = True) -> "Vocab":
        """One token per line; line n becomes id n + 4"""
        try:
            with open(path, encoding="utf-8") as f:
                words = [line.rstrip("\n") for line in f if line.strip()]
        except OSError as e:
            raise DataFormatError(f"Error reading vocab file {path}: {str(e)}") from e
        return cls(words, lowercase=lowercase)

    @classmethod
    def build(cls, sentences: Iterable[str], max_size: Optional[int] = None,
              lowercase: bool = True) -> "Vocab":
        """Frequency-ordered vocabulary, ties broken alphabetically, capped at max_size entries"""
        counts = Counter(word for s in sentences for word in split_words(s, lowercase))
        ranked = sorted(counts, key=lambda w: (-counts[w], w))
        if max_size is not None:
            ranked = ranked[:max(0, max_size - len(AppConfig.RESERVED_TOKENS))]
        return cls(ranked, lowercase=lowercase)

    def save(self, path: str):
        with open(path, "w", encoding="utf-8") as f:
            f.writelines(f"{word}\n" for word in self.words)


def split_words(sentence: str, lowercase: bool = True) -> List[str]:
    """Split on whitespace and punctuation boundaries; punctuation marks become their own words"""
    text = sentence.lower() if lowercase else sentence
    return WORD_PATTERN.findall(text)


def tokenize(vocab: Vocab, sentence: str, t_max: int) -> Tuple[np.ndarray, np.ndarray]:
    """Layout [CLS] w1 .. wn [SEP] [PAD]..., words truncated to t_max - 2"""
    if t_max < 3:
        raise InputError(f"t_max must be at least 3, got {t_max}")
    words = split_words(sentence, vocab.lowercase)
    if not words:
        raise InputError(f"Empty sentence after normalization: {sentence!r}")
    words = words[:t_max - 2]
    ids = np.full(t_max, AppConfig.PAD_ID, dtype=np.int64)
    mask = np.zeros(t_max, dtype=np.int8)
    body = [AppConfig.CLS_ID] + [vocab.lookup(w) for w in words] + [AppConfig.SEP_ID]
    ids[:len(body)] = body
    mask[:len(body)] = 1
    return ids, mask


def tokenize_batch(vocab: Vocab, sentences: Sequence[str], t_max: int) -> TokenizedBatch:
    return TokenizedBatch.stack([tokenize(vocab, s, t_max) for s in sentences])


@dataclass(frozen=True)
class PairBatch:
    """Tokenized sentence pairs with their scores or label ids"""
    left: TokenizedBatch
    right: TokenizedBatch
    scores: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __len__(self):
        return self.left.batch_size

    def select(self, rows: np.ndarray) -> "PairBatch":
        return PairBatch(
            self.left.select(rows),
            self.right.select(rows),
            None if self.scores is None else self.scores[rows],
            None if self.labels is None else self.labels[rows]
        )

    def batches(self, batch_size: int, order: Optional[np.ndarray] = None) -> Iterator["PairBatch"]:
        """Consecutive batches over `order`; the last partial batch is kept"""
        order = np.arange(len(self)) if order is None else order
        for start in range(0, len(order), batch_size):
            yield self.select(order[start:start + batch_size])


def encode_pairs(vocab: Vocab, pairs: Sequence[SentencePair], t_max: int) -> PairBatch:
    if not pairs:
        raise InputError("No sentence pairs to encode")
    left = tokenize_batch(vocab, [p.sentence_a for p in pairs], t_max)
    right = tokenize_batch(vocab, [p.sentence_b for p in pairs], t_max)
    scores = labels = None
    if all(p.score is not None for p in pairs):
        scores = np.array([p.score for p in pairs], dtype=np.float64)
    elif all(p.label is not None for p in pairs):
        labels = np.array([p.label_id for p in pairs], dtype=np.int64)
    else:
        raise DataError("Pairs mix scored and labeled records")
    return PairBatch(left, right, scores, labels)


def _content_lines(path: str, kind: str) -> Tuple[List[str], List[int]]:
    """Non-blank lines of a text file with their 1-based physical line numbers"""
    try:
        with open(path, encoding="utf-8") as f:
            raw = [line.rstrip("\r\n") for line in f]
    except (OSError, UnicodeDecodeError) as e:
        raise DataFormatError(f"Error opening {kind} file {path}: {str(e)}") from e
    numbered = [(line_no, line) for line_no, line in enumerate(raw, start=1) if line.strip()]
    return [line for _, line in numbered], [line_no for line_no, _ in numbered]


def load_stsb(path: str) -> List[SentencePair]:
    """Read an STSb TSV file.

    Accepts the 7-column SemEval layout (genre, file, year, id, score, s1, s2)
    and the minimal 3-column layout (score, s1, s2), line by line. Blank lines
    are skipped; errors name the physical line.
    """
    lines, line_numbers = _content_lines(path, "STSb")
    if not lines:
        return []
    try:
        df = pd.read_csv(io.StringIO("\n".join(lines)), sep="\t", header=None, names=range(STSB_FULL_COLUMNS + 1),
                         dtype=str, quoting=csv.QUOTE_NONE, keep_default_na=False, engine="python")
    except (pd.errors.ParserError, ValueError) as e:
        raise DataFormatError(f"Error reading STSb file {path}: {str(e)}") from e

    pairs = []
    for line_no, row in zip(line_numbers, df.itertuples(index=False)):
        fields = [v for v in row if isinstance(v, str)]
        if len(fields) == STSB_FULL_COLUMNS:
            score_text, sentence_a, sentence_b = fields[4], fields[5], fields[6]
        elif len(fields) == STSB_MIN_COLUMNS:
            score_text, sentence_a, sentence_b = fields
        else:
            raise DataFormatError(
                f"{path}:{line_no}: expected {STSB_MIN_COLUMNS} or {STSB_FULL_COLUMNS} columns, got {len(fields)}")
        try:
            score = float(score_text)
        except ValueError as e:
            raise DataError(f"{path}:{line_no}: score {score_text!r} is not a number") from e
        if not AppConfig.MIN_SCORE <= score <= AppConfig.MAX_SCORE:
            raise DataError(f"{path}:{line_no}: score {score} outside [0, 5]")
        pairs.append(SentencePair(sentence_a=sentence_a, sentence_b=sentence_b, score=score))
    return pairs


def write_stsb(pairs: Sequence[SentencePair], path: str):
    """Minimal 3-column serialisation (score, s1, s2)"""
    df = pd.DataFrame({
        'score': [p.score for p in pairs],
        'sentence_a': [p.sentence_a for p in pairs],
        'sentence_b': [p.sentence_b for p in pairs]
    })
    df.to_csv(path, sep="\t", header=False, index=False, quoting=csv.QUOTE_NONE)


def load_nli(path: str) -> Tuple[List[SentencePair], int]:
    """Read NLI JSON lines (gold_label, sentence1, sentence2).

    Records with gold_label "-" carry no annotator consensus; they are skipped
    and counted. Returns (pairs, skipped).
    """
    lines, line_numbers = _content_lines(path, "NLI")
    if not lines:
        return [], 0
    try:
        df = pd.read_json(io.StringIO("\n".join(lines)), lines=True, dtype=False)
    except ValueError as e:
        raise DataFormatError(f"Error reading NLI file {path}: {str(e)}") from e
    missing = [f for f in NLI_FIELDS if f not in df.columns]
    if missing:
        raise DataFormatError(f"{path}: NLI records lack fields {missing}")

    pairs, skipped = [], 0
    for line_no, record in zip(line_numbers, df[list(NLI_FIELDS)].itertuples(index=False)):
        label = str(record.gold_label)
        if label == AppConfig.NLI_SKIP_LABEL:
            skipped += 1
            continue
        if label not in AppConfig.NLI_LABELS:
            raise DataError(f"{path}:{line_no}: unknown gold_label {label!r}")
        pairs.append(SentencePair(sentence_a=str(record.sentence1),
                                  sentence_b=str(record.sentence2), label=label))
    if skipped:
        logger.warning("Skipped %d NLI records without gold label in %s", skipped, path)
    return pairs, skipped


def jaccard_score(words_a: Iterable, words_b: Iterable) -> float:
    """5 x |A n B| / |A u B| over the two word sets"""
    a, b = set(words_a), set(words_b)
    return AppConfig.MAX_SCORE * len(a & b) / len(a | b)


def synth_sts(n_pairs: int, vocab_size: int, seed: int,
              min_words: int = 3, max_words: int = 8) -> List[SentencePair]:
    """Random word-sequence pairs scored 5 x Jaccard overlap of their word sets"""
    if n_pairs < 2:
        raise InputError(f"synth_sts needs at least 2 pairs, got {n_pairs}")
    if vocab_size < 2 * max_words:
        raise InputError(f"synth_sts needs vocab_size >= {2 * max_words}, got {vocab_size}")
    rng = np.random.default_rng(seed)
    words = np.array([f"w{i}" for i in range(vocab_size)])
    pairs = []
    for _ in range(n_pairs):
        length_a = int(rng.integers(min_words, max_words + 1))
        length_b = int(rng.integers(min_words, max_words + 1))
        set_a = rng.choice(vocab_size, size=length_a, replace=False)
        shared = int(rng.integers(0, min(length_a, length_b) + 1))
        kept = rng.choice(set_a, size=shared, replace=False)
        rest = np.setdiff1d(np.arange(vocab_size), set_a)
        fresh = rng.choice(rest, size=length_b - shared, replace=False)
        set_b = rng.permutation(np.concatenate([kept, fresh]).astype(np.int64))
        score = jaccard_score(set_a.tolist(), set_b.tolist())
        pairs.append(SentencePair(sentence_a=" ".join(words[set_a]),
                                  sentence_b=" ".join(words[set_b]), score=score))
    return pairs


def read_sentences(path: str) -> Tuple[List[str], int]:
    """One sentence per line; blank lines are skipped and counted"""
    try:
        with open(path, encoding="utf-8") as f:
            lines = [line.rstrip("\n") for line in f]
    except OSError as e:
        raise DataFormatError(f"Error reading sentences from {path}: {str(e)}") from e
    sentences = [line for line in lines if split_words(line)]
    skipped = len(lines) - len(sentences)
    if skipped:
        logger.warning("Skipped %d empty input lines in %s", skipped, path)
    return sentences, skipped


def write_embeddings(vectors: np.ndarray, path: str):
    """One tab-separated line of floats per sentence, full precision"""
    ensure_parent_dir(path)
    df = pd.DataFrame(np.asarray(vectors, dtype=np.float64))
    df.to_csv(path, sep="\t", header=False, index=False, float_format="%.17g")


def ensure_parent_dir(path: str):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
