"""Rehearsal memory: per-site quotas, positive-image share, naive and confidence selection."""

from __future__ import annotations

import copy
import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..core import ImageRecord, SiteDataset

DEFAULT_CAP = 125
DEFAULT_POS_FRAC = 0.8
DEFAULT_SITE_FRAC = 0.5


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def site_quota(n_train: int, cap: int = DEFAULT_CAP, site_frac: float = DEFAULT_SITE_FRAC) -> int:
    """Images kept for a site: at most ``cap`` and at most ``site_frac`` of its train set."""
    return min(cap, int(math.floor(site_frac * n_train + 1e-9)))


def class_quotas(quota: int, n_pos: int, n_neg: int, pos_frac: float = DEFAULT_POS_FRAC) -> tuple[int, int]:
    """``(positives, negatives)`` to store for one site.

    Positives get ``round(pos_frac * quota)`` slots, capped by what exists; the
    rest goes to negatives. Missing positives are replaced by negatives; missing
    negatives leave the site short of its quota.
    """
    pos = min(_round_half_up(pos_frac * quota), n_pos)
    return pos, min(quota - pos, n_neg)


@dataclass(frozen=True)
class BufferEntry:
    site_id: str
    record: ImageRecord
    positive: bool
    score: Optional[float] = None

    @property
    def image_id(self) -> str:
        return self.record.image_id


@dataclass
class MemoryBuffer:
    cap: int = DEFAULT_CAP
    pos_frac: float = DEFAULT_POS_FRAC
    site_frac: float = DEFAULT_SITE_FRAC
    sites: dict = field(default_factory=dict)

    def quota(self, n_train: int) -> int:
        return site_quota(n_train, self.cap, self.site_frac)

    def records(self) -> list[ImageRecord]:
        return [e.record for entries in self.sites.values() for e in entries]

    def __len__(self) -> int:
        return sum(len(v) for v in self.sites.values())

    def with_site(self, site_id: str, entries: Sequence[BufferEntry]) -> "MemoryBuffer":
        out = copy.copy(self)
        out.sites = dict(self.sites)
        out.sites[site_id] = list(entries)
        return out

    def manifest(self) -> list[tuple]:
        rows = []
        for site_id, entries in self.sites.items():
            for e in entries:
                rows.append((site_id, e.image_id, int(e.positive), "" if e.score is None else f"{e.score:.6f}"))
        return rows

    def manifest_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["site_id", "image_id", "positive", "score"])
        w.writerows(self.manifest())
        return buf.getvalue()


def _check_site(site: SiteDataset) -> list[ImageRecord]:
    if not site.train:
        raise ValueError(f"site {site.site_id!r} has no training images to buffer")
    return sorted(site.train, key=lambda r: r.image_id)


def build_buffer_naive(buffer: MemoryBuffer, site: SiteDataset, seed: int = 0) -> MemoryBuffer:
    """Add a uniformly random, positivity-balanced selection of the site's train images."""
    records = _check_site(site)
    pos = [r for r in records if r.positive]
    neg = [r for r in records if not r.positive]
    k_pos, k_neg = class_quotas(buffer.quota(len(records)), len(pos), len(neg), buffer.pos_frac)
    rng = np.random.default_rng(seed)
    chosen_pos = [pos[i] for i in sorted(rng.choice(len(pos), size=k_pos, replace=False))]
    chosen_neg = [neg[i] for i in sorted(rng.choice(len(neg), size=k_neg, replace=False))]
    entries = [BufferEntry(site.site_id, r, True) for r in chosen_pos] + \
              [BufferEntry(site.site_id, r, False) for r in chosen_neg]
    return buffer.with_site(site.site_id, entries)


def rank_by_confidence(ids: Sequence[str], scores: Sequence[Optional[float]]) -> list[int]:
    """Indices ordered lowest score first; unscored last; ties by image id."""
    return sorted(range(len(ids)), key=lambda k: (scores[k] is None, scores[k] or 0.0, ids[k]))


def build_buffer_confidence(buffer: MemoryBuffer, site: SiteDataset, model=None, seed: int = 0,
                            score_fn: Optional[Callable[[list[ImageRecord]], list]] = None,
                            source: str = "infected") -> MemoryBuffer:
    """Add the site's train images whose detections are least confident.

    ``model`` is the pipeline trained through this site; scores come from its
    ``source`` member. ``score_fn`` overrides the model with precomputed scores.
    ``seed`` is accepted for signature parity; the selection is deterministic.
    """
    records = _check_site(site)
    if score_fn is None:
        if model is None:
            raise ValueError("confidence selection needs a model or a score_fn")

        def score_fn(recs):
            return model.confidence_scores(recs, source=source)
    scores = list(score_fn(records))
    pos = [k for k, r in enumerate(records) if r.positive]
    neg = [k for k, r in enumerate(records) if not r.positive]
    k_pos, k_neg = class_quotas(buffer.quota(len(records)), len(pos), len(neg), buffer.pos_frac)
    entries = []
    for group, k, flag in ((pos, k_pos, True), (neg, k_neg, False)):
        ranked = rank_by_confidence([records[g].image_id for g in group], [scores[g] for g in group])
        for j in ranked[:k]:
            g = group[j]
            entries.append(BufferEntry(site.site_id, records[g], flag, scores[g]))
    return buffer.with_site(site.site_id, entries)
