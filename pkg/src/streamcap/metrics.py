"""Dense event-captioning metrics.

CIDEr-D follows the coco-caption conventions (n = 1..4, count clipping,
gaussian length penalty with sigma 6, scores scaled by 10).  Localization F1
uses greedy one-to-one IoU matching; SODA_c aligns the start-ordered
prediction and reference sequences with a dynamic program.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

from .codec import TimedEvent, sort_events
from .errors import InvalidArgumentError

DEFAULT_THRESHOLDS = (0.3, 0.5, 0.7, 0.9)
CIDER_SCALE = 10.0
CIDER_N = 4
CIDER_SIGMA = 6.0

Interval = tuple[float, float]


def temporal_iou(a: Interval, b: Interval) -> float:
    (s1, e1), (s2, e2) = a, b
    if not (s1 < e1 and s2 < e2):
        raise InvalidArgumentError(f"invalid intervals {a}, {b}")
    inter = min(e1, e2) - max(s1, s2)
    if inter <= 0:
        return 0.0
    return inter / (max(e1, e2) - min(s1, s2))


def ngram_counts(words: Sequence[Hashable], n: int = CIDER_N) -> Counter:
    words = tuple(words)
    return Counter(words[i : i + k] for k in range(1, n + 1) for i in range(len(words) - k + 1))


@dataclass(frozen=True)
class IdfCorpus:
    df: Mapping[tuple, int]
    n_docs: int

    def idf(self, gram: tuple) -> float:
        # unseen n-grams count as appearing in one document
        return math.log(self.n_docs) - math.log(max(1, self.df.get(gram, 0)))


def build_idf(references: Iterable[Sequence[Hashable]], n: int = CIDER_N) -> IdfCorpus:
    """Document frequencies, one document per reference caption."""
    df: Counter = Counter()
    n_docs = 0
    for ref in references:
        n_docs += 1
        df.update(ngram_counts(ref, n).keys())
    if n_docs == 0:
        raise InvalidArgumentError("cannot build idf statistics from an empty corpus")
    return IdfCorpus(dict(df), n_docs)


def _tfidf(words, corpus: IdfCorpus, n: int):
    vecs = [dict() for _ in range(n)]
    for gram, tf in ngram_counts(words, n).items():
        vecs[len(gram) - 1][gram] = tf * corpus.idf(gram)
    norms = [math.sqrt(sum(v * v for v in vec.values())) for vec in vecs]
    return vecs, norms


def cider_d(candidate: Sequence[Hashable], references: Sequence[Sequence[Hashable]],
            corpus: IdfCorpus, n: int = CIDER_N, sigma: float = CIDER_SIGMA) -> float:
    if not candidate or not references:
        return 0.0
    cvec, cnorm = _tfidf(candidate, corpus, n)
    total = 0.0
    for ref in references:
        rvec, rnorm = _tfidf(ref, corpus, n)
        penalty = math.exp(-((len(candidate) - len(ref)) ** 2) / (2.0 * sigma * sigma))
        for k in range(n):
            if cnorm[k] == 0 or rnorm[k] == 0:
                continue
            dot = sum(min(v, rvec[k].get(g, 0.0)) * rvec[k].get(g, 0.0) for g, v in cvec[k].items())
            total += penalty * dot / (cnorm[k] * rnorm[k])
    return CIDER_SCALE * total / (n * len(references))


def match_at_threshold(preds: Sequence[TimedEvent], gts: Sequence[TimedEvent], thr: float):
    """All (pred, gt) index pairs with IoU >= ``thr``; predictions with no such
    pair appear once as ``(pred, None)``."""
    if not 0.0 < thr <= 1.0:
        raise InvalidArgumentError(f"threshold must lie in (0, 1], got {thr}")
    pairs = []
    for i, p in enumerate(preds):
        hits = [j for j, g in enumerate(gts) if temporal_iou(p.interval, g.interval) >= thr]
        if hits:
            pairs.extend((i, j) for j in hits)
        else:
            pairs.append((i, None))
    return pairs


def dense_cider(preds: Sequence[TimedEvent], gts: Sequence[TimedEvent], corpus: IdfCorpus,
                thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> dict:
    """Mean CIDEr-D over IoU-matched pairs at each threshold, plus the average
    over thresholds under ``"avg"``."""
    out = {}
    cache: dict[tuple[int, int], float] = {}
    for thr in thresholds:
        pairs = match_at_threshold(preds, gts, thr)
        scores = []
        for i, j in pairs:
            if j is None:
                scores.append(0.0)
                continue
            if (i, j) not in cache:
                cache[i, j] = cider_d(preds[i].words, [gts[j].words], corpus)
            scores.append(cache[i, j])
        out[thr] = sum(scores) / len(scores) if scores else 0.0
    out["avg"] = sum(out[t] for t in thresholds) / len(thresholds)
    return out


def greedy_matches(preds: Sequence[TimedEvent], gts: Sequence[TimedEvent], thr: float) -> int:
    cands = []
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            iou = temporal_iou(p.interval, g.interval)
            if iou >= thr and iou > 0:
                cands.append((-iou, i, j))
    cands.sort()
    used_p, used_g = set(), set()
    for _, i, j in cands:
        if i not in used_p and j not in used_g:
            used_p.add(i)
            used_g.add(j)
    return len(used_p)


def f1_localization(preds: Sequence[TimedEvent], gts: Sequence[TimedEvent],
                    thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> dict:
    out = {}
    for thr in thresholds:
        if not preds and not gts:
            out[thr] = 1.0
            continue
        if not preds or not gts:
            out[thr] = 0.0
            continue
        m = greedy_matches(preds, gts, thr)
        precision, recall = m / len(preds), m / len(gts)
        out[thr] = 2 * precision * recall / (precision + recall) if m else 0.0
    out["avg"] = sum(out[t] for t in thresholds) / len(thresholds)
    return out


def soda_c(preds: Sequence[TimedEvent], gts: Sequence[TimedEvent], corpus: IdfCorpus) -> float:
    """Best order-preserving one-to-one alignment, scored by IoU x CIDEr-D and
    reported as the harmonic mean of its precision and recall."""
    if not gts or not preds:
        return 0.0
    preds, gts = sort_events(preds), sort_events(gts)
    score = pair_scores(preds, gts, corpus)
    n, m = len(preds), len(gts)
    best = [[0.0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            best[i][j] = max(best[i - 1][j], best[i][j - 1], best[i - 1][j - 1] + score[i - 1][j - 1])
    total = best[n][m]
    if total <= 0:
        return 0.0
    precision, recall = total / n, total / m
    return 2 * precision * recall / (precision + recall)


def pair_scores(preds, gts, corpus) -> list[list[float]]:
    out = []
    for p in preds:
        row = []
        for g in gts:
            iou = temporal_iou(p.interval, g.interval)
            row.append(iou * cider_d(p.words, [g.words], corpus) if iou > 0 else 0.0)
        out.append(row)
    return out


@dataclass
class EvalReport:
    cider: dict
    f1: dict
    soda_c: float
    n_pred: int
    n_gt: int
    thresholds: tuple = DEFAULT_THRESHOLDS
    per_video: dict = field(default_factory=dict, repr=False)

    def to_json(self) -> dict:
        def keyed(d):
            return {("avg" if k == "avg" else f"{k:g}"): v for k, v in d.items()}

        return {
            "cider": keyed(self.cider),
            "f1": keyed(self.f1),
            "soda_c": self.soda_c,
            "n_pred": self.n_pred,
            "n_gt": self.n_gt,
            "cider_scale": CIDER_SCALE,
        }


def _score_video(preds, gts, corpus, thresholds):
    return (
        dense_cider(preds, gts, corpus, thresholds),
        f1_localization(preds, gts, thresholds),
        soda_c(preds, gts, corpus),
    )


def evaluate(preds_by_video: Mapping[str, Sequence[TimedEvent]],
             gts_by_video: Mapping[str, Sequence[TimedEvent]],
             thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
             corpus: IdfCorpus | None = None, threads: int = 1) -> EvalReport:
    """Score a prediction set against ground truth.

    Every metric is computed per video and averaged over the videos present
    in the ground truth; a video without predictions scores zero.  The idf
    corpus defaults to all ground-truth captions.
    """
    thresholds = tuple(thresholds)
    videos = sorted(gts_by_video)
    if corpus is None:
        corpus = build_idf(e.words for v in videos for e in gts_by_video[v])
    jobs = [(list(preds_by_video.get(v, ())), list(gts_by_video[v])) for v in videos]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(lambda j: _score_video(*j, corpus, thresholds), jobs))
    else:
        results = [_score_video(*j, corpus, thresholds) for j in jobs]

    n = max(1, len(videos))
    keys = list(thresholds) + ["avg"]
    cider = {k: sum(r[0][k] for r in results) / n for k in keys}
    f1 = {k: sum(r[1][k] for r in results) / n for k in keys}
    soda = sum(r[2] for r in results) / n
    return EvalReport(
        cider=cider,
        f1=f1,
        soda_c=soda,
        n_pred=sum(len(p) for p in preds_by_video.values()),
        n_gt=sum(len(g) for g in gts_by_video.values()),
        thresholds=thresholds,
        per_video=dict(zip(videos, results)),
    )
