"""Semantic, spatial, occurrence and combined certainties; pool ranking.

Semantic certainty is one minus the normalized Shannon entropy of each
member's category-probability vector, averaged over the set (0*log(0) := 0;
the normalizer is log(kappa), so the value is independent of the log base).
Spatial certainty is the mean IoU between each member box and the set's mean
box. Occurrence certainty is the fraction of passes that contributed a
member. The combined certainty is the product of the three, and an image is
summarized by the minimum combined certainty over its instance sets.

Images with no instance sets get certainty 1.0: content the detector never
fires on cannot be prioritized by this method, and treating blanks as
maximally uncertain would flood sampling with empty images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .data_io import ImagePasses
from .errors import ValidationError
from .geometry import iou, mean_box
from .grouping import InstanceSet, group_passes


@dataclass(frozen=True)
class CertaintyTriple:
    c_sem: float
    c_spa: float
    c_occ: float

    @property
    def c_h(self) -> float:
        return self.c_sem * self.c_spa * self.c_occ


@dataclass(frozen=True)
class ImageCertainty:
    image_id: str
    triples: tuple[CertaintyTriple, ...]
    c_min: float

    @property
    def set_count(self) -> int:
        return len(self.triples)

    @property
    def min_triple(self) -> CertaintyTriple | None:
        """The triple of the set achieving c_min (earliest set on ties)."""
        if not self.triples:
            return None
        return min(self.triples, key=lambda t: t.c_h)


def _entropy(scores: Sequence[float]) -> float:
    return -sum(s * math.log(s) for s in scores if s > 0.0)


def semantic_certainty(instance_set: InstanceSet, kappa: int) -> float:
    """Mean over members of 1 - H(scores)/log(kappa)."""
    if kappa < 2:
        raise ValidationError(f"semantic certainty needs kappa >= 2, got {kappa}")
    h_max = math.log(kappa)
    total = 0.0
    for _, det in instance_set.members:
        if len(det.scores) != kappa:
            raise ValidationError(
                f"score vector length {len(det.scores)} does not match kappa={kappa}"
            )
        total += 1.0 - _entropy(det.scores) / h_max
    return total / instance_set.size


def spatial_certainty(instance_set: InstanceSet) -> float:
    """Mean IoU between each member box and the set's mean box."""
    boxes = instance_set.boxes
    center = mean_box(boxes)
    return sum(iou(center, b) for b in boxes) / len(boxes)


def occurrence_certainty(instance_set: InstanceSet, n: int) -> float:
    """Fraction of the n passes represented in the set."""
    r = instance_set.size
    assert r <= n, f"instance set size {r} exceeds pass count {n}"
    return r / n


def combined_certainty(triple: CertaintyTriple) -> float:
    return triple.c_h


def set_certainty(instance_set: InstanceSet, kappa: int, n: int) -> CertaintyTriple:
    return CertaintyTriple(
        c_sem=semantic_certainty(instance_set, kappa),
        c_spa=spatial_certainty(instance_set),
        c_occ=occurrence_certainty(instance_set, n),
    )


def image_certainty(
    img: ImagePasses, kappa: int, n: int, match_iou: float = 0.5
) -> ImageCertainty:
    """Group an image's passes and reduce to the per-image minimum certainty."""
    sets = group_passes(img, match_iou)
    triples = tuple(set_certainty(s, kappa, n) for s in sets)
    c_min = min((t.c_h for t in triples), default=1.0)
    return ImageCertainty(img.image_id, triples, c_min)


def rank_pool(
    pool: Sequence[ImagePasses], kappa: int, n: int, match_iou: float = 0.5
) -> list[tuple[str, float]]:
    """Rank images ascending by c_min; ties broken by image_id."""
    scored = [image_certainty(img, kappa, n, match_iou) for img in pool]
    scored.sort(key=lambda ic: (ic.c_min, ic.image_id))
    return [(ic.image_id, ic.c_min) for ic in scored]
