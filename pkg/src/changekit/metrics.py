"""Caption and task metrics, implemented from their defining formulas.

Tokenization (the single source of truth for every metric here):

1. lowercase the text;
2. split clitics off their host word: ``n't`` and ``'s 'm 're 've 'll 'd``
   become separate tokens (so ``don't`` -> ``do n't``);
3. runs of letters and runs of digits are tokens;
4. every remaining non-space character is a single-character token;
5. whitespace only separates and is dropped.

METEOR here is a documented variant of the cited metric: the synonym stage
is omitted (exact surface matches first, then Porter-stem matches), the
staged alignment pairs each hypothesis token with the leftmost unmatched
reference candidate, and the fragmentation penalty is
``0.5 * ((chunks - 1) / matches)^3`` so that a perfectly contiguous
alignment (an identical sentence) scores exactly 1.0.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field

from .errors import CorpusTooSmall, EmptyHypothesis, EmptyInput, LengthMismatch
from .stemmer import stem

ROUGE_BETA = 1.2
CIDER_SIGMA = 6.0
CIDER_MAX_N = 4

_CLITIC_NT = re.compile(r"(\w)(n't)\b")
_CLITIC_APOS = re.compile(r"(\w)('(?:s|m|re|ve|ll|d))\b")
_TOKEN_RE = re.compile(r"n't|'(?:s|m|re|ve|ll|d)|[a-z]+|[0-9]+|[^a-z0-9\s]")


def tokenize(text: str) -> list[str]:
    lowered = text.lower()
    spaced = _CLITIC_NT.sub(r"\1 \2", lowered)
    spaced = _CLITIC_APOS.sub(r"\1 \2", spaced)
    return _TOKEN_RE.findall(spaced)


@dataclass(frozen=True)
class EvalPair:
    """One scored sample: a hypothesis against 1-5 reference token lists."""

    sample_id: str
    hypothesis: tuple[str, ...]
    references: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if not 1 <= len(self.references) <= 5:
            raise ValueError(f"EvalPair needs 1-5 references, got {len(self.references)}")


def make_pair(sample_id: str, hypothesis: str, references: list[str]) -> EvalPair:
    return EvalPair(
        sample_id=sample_id,
        hypothesis=tuple(tokenize(hypothesis)),
        references=tuple(tuple(tokenize(r)) for r in references),
    )


def _require_pairs(pairs) -> None:
    if not pairs:
        raise EmptyInput("metric requested over an empty corpus")
    for p in pairs:
        if not p.hypothesis:
            raise EmptyHypothesis(f"sample {p.sample_id} has an empty hypothesis")


def bleu1(pairs: list[EvalPair]) -> float:
    """Corpus-level modified unigram precision times the brevity penalty."""
    _require_pairs(pairs)
    clipped = 0
    hyp_total = 0
    ref_total = 0
    for p in pairs:
        counts = Counter(p.hypothesis)
        ceiling: Counter = Counter()
        for ref in p.references:
            for tok, c in Counter(ref).items():
                if c > ceiling[tok]:
                    ceiling[tok] = c
        clipped += sum(min(c, ceiling.get(tok, 0)) for tok, c in counts.items())
        hyp_total += len(p.hypothesis)
        # closest reference length; ties go to the shorter reference
        ref_total += len(min(p.references, key=lambda r: (abs(len(r) - len(p.hypothesis)), len(r))))
    precision = clipped / hyp_total
    brevity = 1.0 if hyp_total > ref_total else math.exp(1.0 - ref_total / hyp_total)
    return precision * brevity


def _lcs(a: tuple[str, ...], b: tuple[str, ...]) -> int:
    # rolling single-row dynamic program
    if not a or not b:
        return 0
    row = [0] * (len(b) + 1)
    for tok in a:
        prev_diag = 0
        for j, btok in enumerate(b, start=1):
            tmp = row[j]
            row[j] = prev_diag + 1 if tok == btok else max(row[j], row[j - 1])
            prev_diag = tmp
    return row[-1]


def rouge_l(pairs: list[EvalPair]) -> float:
    """Mean over pairs of the best per-reference LCS F-measure (beta = 1.2)."""
    _require_pairs(pairs)
    beta2 = ROUGE_BETA * ROUGE_BETA
    total = 0.0
    for p in pairs:
        best = 0.0
        for ref in p.references:
            lcs = _lcs(p.hypothesis, ref)
            if lcs == 0 or not ref:
                continue
            prec = lcs / len(p.hypothesis)
            rec = lcs / len(ref)
            score = (1 + beta2) * prec * rec / (rec + beta2 * prec)
            if score > best:
                best = score
        total += best
    return total / len(pairs)


def _stage_match(hyp_keys: list, ref_keys: list, hyp_open: list[int], ref_open: list[int]) -> list[tuple[int, int]]:
    # pair each open hypothesis position with the leftmost open reference
    # position carrying the same key
    available: dict = defaultdict(deque)
    for j in ref_open:
        available[ref_keys[j]].append(j)
    matched = []
    for i in hyp_open:
        queue = available.get(hyp_keys[i])
        if queue:
            matched.append((i, queue.popleft()))
    return matched


def meteor(pairs: list[EvalPair]) -> float:
    """Exact+stem METEOR variant; see the module docstring for the deltas."""
    _require_pairs(pairs)
    total = 0.0
    for p in pairs:
        best = 0.0
        hyp = list(p.hypothesis)
        hyp_stems = [stem(t) for t in hyp]
        for ref in p.references:
            if not ref:
                continue
            ref_list = list(ref)
            exact = _stage_match(hyp, ref_list, list(range(len(hyp))), list(range(len(ref_list))))
            hyp_left = sorted(set(range(len(hyp))) - {i for i, _ in exact})
            ref_left = sorted(set(range(len(ref_list))) - {j for _, j in exact})
            stems = _stage_match(hyp_stems, [stem(t) for t in ref_list], hyp_left, ref_left)
            aligned = sorted(exact + stems)
            m = len(aligned)
            if m == 0:
                continue
            prec = m / len(hyp)
            rec = m / len(ref_list)
            f_mean = 10 * prec * rec / (rec + 9 * prec)
            chunks = 1 + sum(
                1
                for (ai, aj), (bi, bj) in zip(aligned, aligned[1:])
                if not (bi == ai + 1 and bj == aj + 1)
            )
            penalty = 0.5 * ((chunks - 1) / m) ** 3
            score = f_mean * (1 - penalty)
            if score > best:
                best = score
        total += best
    return total / len(pairs)


def _ngrams(tokens: tuple[str, ...], max_n: int) -> Counter:
    grams: Counter = Counter()
    for n in range(1, max_n + 1):
        for i in range(len(tokens) - n + 1):
            grams[tuple(tokens[i : i + n])] += 1
    return grams


def cider_d(pairs: list[EvalPair]) -> float:
    """Clipped TF-IDF n-gram cosine (n = 1..4) with a Gaussian length penalty.

    Document frequencies come from the reference corpus (one document per
    pair); the per-pair score averages over references and n, times 10.
    """
    _require_pairs(pairs)
    if len(pairs) < 2:
        raise CorpusTooSmall("CIDEr-D document frequencies need at least 2 pairs")
    doc_freq: Counter = Counter()
    for p in pairs:
        grams = set()
        for ref in p.references:
            grams |= set(_ngrams(ref, CIDER_MAX_N))
        doc_freq.update(grams)
    log_n = math.log(len(pairs))

    def tfidf(tokens):
        vec = [dict() for _ in range(CIDER_MAX_N)]
        norm = [0.0] * CIDER_MAX_N
        for gram, tf in _ngrams(tokens, CIDER_MAX_N).items():
            weight = tf * (log_n - math.log(max(1.0, doc_freq[gram])))
            slot = len(gram) - 1
            vec[slot][gram] = weight
            norm[slot] += weight * weight
        return vec, [math.sqrt(v) for v in norm]

    corpus_total = 0.0
    two_sigma2 = 2.0 * CIDER_SIGMA * CIDER_SIGMA
    for p in pairs:
        hvec, hnorm = tfidf(p.hypothesis)
        pair_total = 0.0
        for ref in p.references:
            rvec, rnorm = tfidf(ref)
            penalty = math.exp(-((len(p.hypothesis) - len(ref)) ** 2) / two_sigma2)
            for n in range(CIDER_MAX_N):
                if hnorm[n] == 0.0 or rnorm[n] == 0.0:
                    continue
                dot = 0.0
                rv = rvec[n]
                for gram, hw in hvec[n].items():
                    rw = rv.get(gram)
                    if rw is not None:
                        dot += min(hw, rw) * rw
                pair_total += penalty * dot / (hnorm[n] * rnorm[n])
        corpus_total += 10.0 * pair_total / (CIDER_MAX_N * len(p.references))
    return corpus_total / len(pairs)


def mae(predictions: list[float], ground_truth: list[float]) -> float:
    if len(predictions) != len(ground_truth):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(ground_truth)} ground truths")
    if not predictions:
        raise EmptyInput("MAE over zero samples")
    return sum(abs(p - g) for p, g in zip(predictions, ground_truth)) / len(predictions)


def binary_scores(predictions: list[bool], ground_truth: list[bool]) -> tuple[float, float | None]:
    """(accuracy, recall); recall is None when there are no positives."""
    if len(predictions) != len(ground_truth):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(ground_truth)} ground truths")
    if not predictions:
        raise EmptyInput("binary scores over zero samples")
    correct = sum(1 for p, g in zip(predictions, ground_truth) if p == g)
    positives = sum(1 for g in ground_truth if g)
    accuracy = correct / len(predictions)
    if positives == 0:
        return accuracy, None
    true_pos = sum(1 for p, g in zip(predictions, ground_truth) if p and g)
    return accuracy, true_pos / positives


@dataclass
class MetricsReport:
    """Corpus-level scores for one evaluation task."""

    task: str
    evaluated: int = 0
    failed: int = 0
    unparseable: int = 0
    bleu1: float | None = None
    meteor: float | None = None
    rouge_l: float | None = None
    cider_d: float | None = None
    accuracy: float | None = None
    recall: float | None = None
    mae: dict[str, float] = field(default_factory=dict)
    mean_iou: float | None = None

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "evaluated": self.evaluated,
            "failed": self.failed,
            "unparseable": self.unparseable,
            "bleu1": self.bleu1,
            "meteor": self.meteor,
            "rouge_l": self.rouge_l,
            "cider_d": self.cider_d,
            "accuracy": self.accuracy,
            "recall": self.recall,
            "mae": dict(self.mae),
            "mean_iou": self.mean_iou,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MetricsReport":
        return cls(
            task=obj["task"],
            evaluated=obj.get("evaluated", 0),
            failed=obj.get("failed", 0),
            unparseable=obj.get("unparseable", 0),
            bleu1=obj.get("bleu1"),
            meteor=obj.get("meteor"),
            rouge_l=obj.get("rouge_l"),
            cider_d=obj.get("cider_d"),
            accuracy=obj.get("accuracy"),
            recall=obj.get("recall"),
            mae=dict(obj.get("mae") or {}),
            mean_iou=obj.get("mean_iou"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2, sort_keys=True)

    def format_table(self) -> str:
        """Console summary; caption scores and rates are shown x100, 2 dp."""
        lines = [f"task: {self.task}   evaluated: {self.evaluated}   failed: {self.failed}   unparseable: {self.unparseable}"]
        if self.bleu1 is not None:
            header = f"{'BLEU-1':>8} {'METEOR':>8} {'ROUGE-L':>8} {'CIDEr-D':>8}"
            values = " ".join(
                f"{(v if v is not None else float('nan')) * 100:>8.2f}"
                for v in (self.bleu1, self.meteor, self.rouge_l, self.cider_d)
            )
            lines += [header, values]
        if self.accuracy is not None:
            recall_text = f"{self.recall * 100:.2f}%" if self.recall is not None else "n/a"
            lines.append(f"Accuracy {self.accuracy * 100:.2f}%   Recall {recall_text}")
        if self.mae:
            lines.append("   ".join(f"MAE ({name}) {value:.2f}" for name, value in sorted(self.mae.items())))
        if self.mean_iou is not None:
            lines.append(f"Mean IoU {self.mean_iou * 100:.2f}")
        return "\n".join(lines)
