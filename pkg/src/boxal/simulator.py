"""Synthetic dataset generator and a stochastic stand-in detector.

The simulator lets the whole sampling loop run at desk scale. A synthetic
world holds images with ground-truth boxes, a category catalog with Zipf-like
imbalance, and a per-image difficulty in [0, 1]. The detector's skill per
category saturates hyperbolically with annotated-instance exposure,
``skill(c) = e_c / (e_c + k)``, so performance plateaus as the training set
grows. Detection probability, box jitter, and score sharpness all improve
with skill and degrade with image difficulty; false positives decay as mean
skill rises. Everything is reproducible from explicit seeds.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data_io import (
    CategoryCatalog,
    DatasetManifest,
    Detection,
    GroundTruthImage,
    ImagePasses,
    apply_thresholds,
)
from .errors import ValidationError
from .geometry import BoundingBox, iou


@dataclass(frozen=True)
class WorldImage:
    image_id: str
    width: int
    height: int
    difficulty: float
    objects: tuple[tuple[BoundingBox, int], ...]

    @property
    def ground_truth(self) -> GroundTruthImage:
        return GroundTruthImage(self.image_id, self.objects)


@dataclass(frozen=True)
class SyntheticWorld:
    catalog: CategoryCatalog
    images: dict[str, WorldImage]
    manifest: DatasetManifest
    seed: int

    def ground_truth(self) -> dict[str, GroundTruthImage]:
        return {image_id: img.ground_truth for image_id, img in self.images.items()}


@dataclass(frozen=True)
class SkillState:
    """Per-category detector skill plus the noise model parameters."""

    exposures: tuple[int, ...]
    half_saturation: float = 20.0  # k: exposures at which skill reaches 0.5
    jitter_sigma: float = 0.05  # box-corner jitter, fraction of box diagonal
    fp_rate: float = 0.3  # Poisson rate of false positives per pass at zero skill
    p_lo: float = 0.45  # detection probability floor (zero skill)
    p_hi: float = 1.0  # detection probability ceiling (full skill)
    noise_concentration: float = 0.5  # Dirichlet concentration of score noise
    fp_concentration: float = 10.0  # Dirichlet concentration of false-positive scores

    def skill(self, category: int) -> float:
        e = self.exposures[category]
        return e / (e + self.half_saturation)

    @property
    def mean_skill(self) -> float:
        return sum(self.skill(c) for c in range(len(self.exposures))) / len(self.exposures)

    def to_dict(self) -> dict:
        return {
            "exposures": list(self.exposures),
            "half_saturation": self.half_saturation,
            "jitter_sigma": self.jitter_sigma,
            "fp_rate": self.fp_rate,
            "p_lo": self.p_lo,
            "p_hi": self.p_hi,
            "noise_concentration": self.noise_concentration,
            "fp_concentration": self.fp_concentration,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SkillState":
        return cls(
            exposures=tuple(int(e) for e in doc["exposures"]),
            half_saturation=float(doc["half_saturation"]),
            jitter_sigma=float(doc["jitter_sigma"]),
            fp_rate=float(doc["fp_rate"]),
            p_lo=float(doc["p_lo"]),
            p_hi=float(doc["p_hi"]),
            noise_concentration=float(doc["noise_concentration"]),
            fp_concentration=float(doc["fp_concentration"]),
        )

    @classmethod
    def fresh(cls, kappa: int, **overrides) -> "SkillState":
        return cls(exposures=(0,) * kappa, **overrides)


def _category_weights(kappa: int, imbalance: float) -> np.ndarray:
    # Zipf-like imbalance: a few dominant categories, a long rare tail
    weights = 1.0 / np.arange(1, kappa + 1) ** imbalance
    return weights / weights.sum()


def _place_box(rng: np.random.Generator, width: int, height: int) -> BoundingBox:
    bw = rng.uniform(0.10, 0.28) * width
    bh = rng.uniform(0.10, 0.28) * height
    x0 = rng.uniform(0.0, width - bw)
    y0 = rng.uniform(0.0, height - bh)
    return BoundingBox(x0, y0, x0 + bw, y0 + bh)


def generate_world(
    seed: int,
    image_count: int,
    kappa: int,
    objects_per_image: tuple[int, int] = (1, 4),
    image_size: tuple[int, int] = (640, 480),
    initial_training: int | None = None,
    validation: int | None = None,
    test: int | None = None,
    max_gt_overlap: float = 0.3,
    category_imbalance: float = 1.2,
) -> SyntheticWorld:
    """Deterministically generate a world and its dataset partitions.

    Partition sizes default to 10% initial training, 10% validation and 15%
    test (at least one image each when the world is nonempty); the remainder
    is the unlabeled pool.
    """
    lo, hi = objects_per_image
    if lo < 0 or hi < lo:
        raise ValidationError(f"invalid objects_per_image range {objects_per_image}")
    width, height = image_size
    catalog = CategoryCatalog(tuple(f"cat_{i:02d}" for i in range(kappa)))
    rng = np.random.Generator(np.random.PCG64(seed))
    weights = _category_weights(kappa, category_imbalance)

    images: dict[str, WorldImage] = {}
    for i in range(image_count):
        image_id = f"img_{i:05d}"
        difficulty = float(rng.uniform(0.0, 1.0))
        count = int(rng.integers(lo, hi + 1))
        objects: list[tuple[BoundingBox, int]] = []
        for _ in range(count):
            box = _place_box(rng, width, height)
            for _ in range(50):  # bounded-overlap rejection sampling, best effort
                if all(iou(box, other) <= max_gt_overlap for other, _ in objects):
                    break
                box = _place_box(rng, width, height)
            category = int(rng.choice(kappa, p=weights))
            objects.append((box, category))
        images[image_id] = WorldImage(image_id, width, height, difficulty, tuple(objects))

    ids = list(images)
    rng.shuffle(ids)
    n_init = initial_training if initial_training is not None else max(1, image_count // 10)
    n_val = validation if validation is not None else max(1, image_count // 10)
    n_test = test if test is not None else max(1, (image_count * 15) // 100)
    if image_count == 0:
        n_init = n_val = n_test = 0
    if n_init + n_val + n_test > image_count:
        raise ValidationError(
            f"partitions ({n_init}+{n_val}+{n_test}) exceed image count {image_count}"
        )
    manifest = DatasetManifest(
        catalog=catalog,
        initial_training=tuple(ids[:n_init]),
        validation=tuple(ids[n_init : n_init + n_val]),
        test=tuple(ids[n_init + n_val : n_init + n_val + n_test]),
        pool=tuple(ids[n_init + n_val + n_test :]),
    )
    return SyntheticWorld(catalog, images, manifest, seed)


def save_world(world: SyntheticWorld, path: str | Path) -> None:
    doc = {
        "seed": world.seed,
        "categories": list(world.catalog.names),
        "manifest": {
            "initial_training": list(world.manifest.initial_training),
            "pool": list(world.manifest.pool),
            "validation": list(world.manifest.validation),
            "test": list(world.manifest.test),
        },
        "images": [
            {
                "image_id": img.image_id,
                "width": img.width,
                "height": img.height,
                "difficulty": img.difficulty,
                "objects": [
                    {"bbox": list(box.as_tuple()), "category": cat} for box, cat in img.objects
                ],
            }
            for img in world.images.values()
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_world(path: str | Path) -> SyntheticWorld:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    catalog = CategoryCatalog(tuple(doc["categories"]))
    images = {}
    for raw in doc["images"]:
        objects = tuple(
            (BoundingBox(*obj["bbox"]), int(obj["category"])) for obj in raw["objects"]
        )
        images[raw["image_id"]] = WorldImage(
            raw["image_id"], int(raw["width"]), int(raw["height"]), float(raw["difficulty"]), objects
        )
    m = doc["manifest"]
    manifest = DatasetManifest(
        catalog=catalog,
        initial_training=tuple(m["initial_training"]),
        pool=tuple(m["pool"]),
        validation=tuple(m["validation"]),
        test=tuple(m["test"]),
    )
    return SyntheticWorld(catalog, images, manifest, int(doc["seed"]))


def _pass_rng(pass_seed: int, image_id: str, pass_index: int) -> np.random.Generator:
    digest = hashlib.blake2b(
        f"{pass_seed}|{image_id}|{pass_index}".encode(), digest_size=8
    ).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))


def _dirichlet(rng: np.random.Generator, concentration: float, kappa: int) -> np.ndarray:
    draw = rng.gamma(concentration, size=kappa)
    total = draw.sum()
    if total <= 0.0:
        return np.full(kappa, 1.0 / kappa)
    return draw / total


def simulate_passes(
    world: SyntheticWorld,
    skill: SkillState,
    image_id: str,
    n: int,
    pass_seed: int,
    confidence: float = 0.5,
    nms_iou: float = 0.3,
) -> ImagePasses:
    """Run n stochastic forward passes over one image.

    Each pass is deterministic given (pass_seed, image_id, pass index). The
    returned passes already have the confidence and NMS thresholds applied.
    """
    img = world.images[image_id]
    kappa = len(world.catalog)
    d = img.difficulty
    passes = []
    for pass_index in range(n):
        rng = _pass_rng(pass_seed, image_id, pass_index)
        dets: list[Detection] = []
        for box, category in img.objects:
            s = skill.skill(category)
            effective = s * (1.0 - d)
            p_det = min(max(skill.p_lo + (skill.p_hi - skill.p_lo) * effective, 0.0), 1.0)
            detected = rng.random() < p_det
            diag = ((box.x_max - box.x_min) ** 2 + (box.y_max - box.y_min) ** 2) ** 0.5
            sigma = skill.jitter_sigma * (1.0 - effective) * diag
            jitter = rng.normal(0.0, 1.0, size=4) * sigma
            noise = _dirichlet(rng, skill.noise_concentration, kappa)
            if not detected:
                continue
            x0 = max(0.0, box.x_min + jitter[0])
            y0 = max(0.0, box.y_min + jitter[1])
            x1 = min(float(img.width), box.x_max + jitter[2])
            y1 = min(float(img.height), box.y_max + jitter[3])
            if x1 - x0 < 1e-6 or y1 - y0 < 1e-6:
                continue  # jitter collapsed the box: counts as a miss
            alpha = effective
            scores = (1.0 - alpha) * noise
            scores[category] += alpha
            scores /= scores.sum()
            dets.append(Detection(BoundingBox(x0, y0, x1, y1), tuple(float(v) for v in scores)))
        fp_count = int(rng.poisson(skill.fp_rate * (1.0 - skill.mean_skill)))
        for _ in range(fp_count):
            fp_box = _place_box(rng, img.width, img.height)
            fp_scores = _dirichlet(rng, skill.fp_concentration, kappa)
            fp_scores /= fp_scores.sum()
            dets.append(Detection(fp_box, tuple(float(v) for v in fp_scores)))
        passes.append(tuple(dets))
    raw = ImagePasses(image_id, img.width, img.height, tuple(passes))
    return apply_thresholds(raw, confidence, nms_iou)


def train_update(skill: SkillState, newly_annotated: Iterable[GroundTruthImage]) -> SkillState:
    """Add the annotated instances of the sampled images to the exposure counts."""
    exposures = list(skill.exposures)
    for gt in newly_annotated:
        for _, category in gt.objects:
            if not 0 <= category < len(exposures):
                raise ValidationError(f"{gt.image_id}: category {category} outside catalog")
            exposures[category] += 1
    return replace(skill, exposures=tuple(exposures))
