"""Utterance classification: does what the user just said signal a need
for help?

Features are bag-of-words counts plus two aggregate counts, one over
question words and one over negations; the matched words stay in the bag
as ordinary tokens as well.  The classifier is a multinomial naive Bayes
with add-alpha smoothing, chosen for data efficiency at small corpus
sizes.  Models serialize as raw counts so a reload recomputes the exact
same likelihoods.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

QUESTION_WORDS = frozenset(
    {"what", "who", "which", "where", "when", "how", "why"}
)
NEGATION_WORDS = frozenset(
    {
        "no", "not", "none", "nothing",
        "isn't", "aren't", "don't", "won't",
        "wasn't", "weren't", "wouldn't", "shouldn't", "couldn't", "can't",
    }
)

# Aggregate feature keys.  Natural tokens are lowercased by tokenize, so
# uppercase names can never collide with them.
QWORD = "QWORD"
NEG = "NEG"

_TOKEN_RE = re.compile(r"[^\W_]+(?:'[^\W_]+)*")


@dataclass(frozen=True)
class Utterance:
    """A transcribed utterance; t is the transcript finalization time."""

    text: str
    t: float


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumerics, keeping internal
    apostrophes so contractions like "don't" survive as one token."""
    return _TOKEN_RE.findall(text.lower().replace("’", "'"))


def extract_features(tokens: list[str], use_aggregates: bool = True) -> Counter:
    """Token counts, plus QWORD/NEG aggregate counts when enabled."""
    counts = Counter(tokens)
    if use_aggregates:
        counts[QWORD] = sum(c for w, c in counts.items() if w in QUESTION_WORDS)
        counts[NEG] = sum(c for w, c in counts.items() if w in NEGATION_WORDS)
    return counts


class CorpusError(ValueError):
    """Training corpus cannot support the model (e.g. one class missing)."""


@dataclass
class NBModel:
    """Multinomial naive Bayes over utterance features.

    Stores per-class document and token counts; priors and smoothed
    likelihoods are derived, so serialization of the counts reproduces the
    model exactly.
    """

    alpha: float
    use_aggregates: bool
    doc_counts: tuple[int, int]
    token_counts: dict[str, tuple[int, int]]
    _totals: tuple[int, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._totals = (
            sum(c[0] for c in self.token_counts.values()),
            sum(c[1] for c in self.token_counts.values()),
        )

    @property
    def vocabulary(self) -> set[str]:
        return set(self.token_counts)

    def prior(self, label: int) -> float:
        return self.doc_counts[label] / sum(self.doc_counts)

    def likelihood(self, token: str, label: int) -> float:
        """Add-alpha smoothed P(token | class); token must be in-vocabulary."""
        v = len(self.token_counts)
        return (self.token_counts[token][label] + self.alpha) / (
            self._totals[label] + self.alpha * v
        )

    def predict(self, features: Counter) -> float:
        """Posterior probability of the help class, computed in log space.

        Tokens outside the training vocabulary are ignored; with no
        in-vocabulary evidence the posterior is the class prior.
        """
        logs = []
        for label in (0, 1):
            score = math.log(self.prior(label))
            for token, count in features.items():
                if count and token in self.token_counts:
                    score += count * math.log(self.likelihood(token, label))
            logs.append(score)
        m = max(logs)
        z = sum(math.exp(s - m) for s in logs)
        return math.exp(logs[1] - m) / z

    def predict_text(self, text: str) -> float | None:
        """Classify raw text; None if it tokenizes to nothing."""
        tokens = tokenize(text)
        if not tokens:
            return None
        return self.predict(extract_features(tokens, self.use_aggregates))

    def to_lines(self) -> list[str]:
        lines = [
            "format=needsense-nb version=1",
            f"alpha={self.alpha!r}",
            f"use_aggregates={int(self.use_aggregates)}",
            f"docs c0={self.doc_counts[0]} c1={self.doc_counts[1]}",
        ]
        for token in sorted(self.token_counts):
            c0, c1 = self.token_counts[token]
            lines.append(f"token={token} c0={c0} c1={c1}")
        return lines

    @classmethod
    def from_lines(cls, lines: list[str]) -> "NBModel":
        if not lines or lines[0].strip() != "format=needsense-nb version=1":
            raise ValueError("not a naive Bayes model file")
        alpha = None
        use_aggregates = True
        doc_counts = None
        token_counts: dict[str, tuple[int, int]] = {}
        for line in lines[1:]:
            line = line.strip()
            if not line:
                continue
            if line.startswith("alpha="):
                alpha = float(line.split("=", 1)[1])
            elif line.startswith("use_aggregates="):
                use_aggregates = bool(int(line.split("=", 1)[1]))
            elif line.startswith("docs "):
                parts = dict(p.split("=") for p in line.split()[1:])
                doc_counts = (int(parts["c0"]), int(parts["c1"]))
            elif line.startswith("token="):
                parts = dict(p.split("=") for p in line.split())
                token_counts[parts["token"]] = (int(parts["c0"]), int(parts["c1"]))
            else:
                raise ValueError(f"unrecognized model line: {line}")
        if alpha is None or doc_counts is None:
            raise ValueError("model file missing alpha or document counts")
        return cls(alpha, use_aggregates, doc_counts, token_counts)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.to_lines()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "NBModel":
        return cls.from_lines(
            Path(path).read_text(encoding="utf-8").splitlines()
        )


def train_nb(
    corpus: list[tuple[Counter, int]],
    alpha: float = 1.0,
    use_aggregates: bool = True,
) -> NBModel:
    """Fit the model from (features, binary label) pairs.

    Priors are class document frequencies; the vocabulary is every token
    with a positive count in some document, plus the aggregate keys when
    enabled.  Both classes must be present.
    """
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    doc_counts = [0, 0]
    token_counts: dict[str, list[int]] = {}
    for features, label in corpus:
        if label not in (0, 1):
            raise ValueError(f"labels must be 0 or 1, got {label!r}")
        doc_counts[label] += 1
        for token, count in features.items():
            if count:
                token_counts.setdefault(token, [0, 0])[label] += count
    if doc_counts[0] == 0 and doc_counts[1] == 0:
        raise CorpusError("training corpus has no usable utterances")
    if doc_counts[1] == 0:
        raise CorpusError("training corpus has no help-class utterances")
    if doc_counts[0] == 0:
        raise CorpusError("training corpus has no no-help-class utterances")
    if use_aggregates:
        token_counts.setdefault(QWORD, [0, 0])
        token_counts.setdefault(NEG, [0, 0])
    return NBModel(
        alpha=alpha,
        use_aggregates=use_aggregates,
        doc_counts=(doc_counts[0], doc_counts[1]),
        token_counts={t: (c[0], c[1]) for t, c in token_counts.items()},
    )


def train_from_utterances(
    rows: list[tuple[Utterance, int]],
    alpha: float = 1.0,
    use_aggregates: bool = True,
) -> NBModel:
    """Tokenize and featurize labeled utterances, dropping any that
    tokenize to nothing, then fit."""
    corpus = []
    for utt, label in rows:
        tokens = tokenize(utt.text)
        if tokens:
            corpus.append((extract_features(tokens, use_aggregates), label))
    return train_nb(corpus, alpha=alpha, use_aggregates=use_aggregates)
