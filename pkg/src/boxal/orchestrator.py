"""The iterative annotate-retrain loop, run persistence, and adapter protocol.

A run lives in a directory with this layout::

    RUNDIR/
      config.json            run parameters (RunConfig)
      manifest.json          dataset partitions
      ground_truth.jsonl     annotations, revealed image-by-image on sampling
      state/iter_N.json      persisted loop state after iteration N
      requests/              detection/training request documents
      detections/            adapter-produced multi-pass detection files
      samples/iter_N.txt     ids sampled when building training set T_N
      trainset_iter_N.txt    full training set after iteration N
      log.csv                per-iteration metrics report
      events.log             append-only audit trail
      sim/                   simulator adapter state (when used)

The detector adapter is a file contract, not an in-process interface: the
orchestrator writes a JSON request naming the images (and, for training, the
epoch budget), and the adapter must produce a detections file in the
documented format plus a ``<file>.done`` sentinel. The built-in simulator
adapter fulfils the contract in-process; ``FileWaitAdapter`` waits for an
external trainer to do the same.

State is persisted atomically (write to a temp file, then rename), so a crash
mid-iteration leaves the previous iteration's state intact.
"""

from __future__ import annotations

import csv
import json
import os
import time
from abc import ABC, abstractmethod
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

from . import sampling
from .certainty import image_certainty
from .data_io import (
    DatasetManifest,
    GroundTruthImage,
    ImagePasses,
    apply_thresholds,
    load_ground_truth,
    load_image_passes,
    load_manifest,
    save_ground_truth,
    save_image_passes,
    save_manifest,
)
from .errors import AdapterError, BoxalError, ValidationError
from .evaluation import TTestResult, coco_map, consolidate, f1_image, ttest_two_sided
from .grouping import group_passes
from .simulator import SkillState, SyntheticWorld, simulate_passes, train_update


@dataclass(frozen=True)
class RunConfig:
    passes_n: int = 15
    dropout_p: float = 0.75  # informational: executed by the detector, not here
    confidence: float = 0.5
    nms_iou: float = 0.3
    match_iou: float = 0.5
    batch_size: int = 100
    iterations: int = 10
    epoch_base: int = 5
    epoch_increment: int = 5
    strategy: str = "min_certainty"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.passes_n < 2:
            raise ValidationError(f"passes_n must be >= 2, got {self.passes_n}")
        if self.iterations < 1:
            raise ValidationError(f"iterations must be >= 1, got {self.iterations}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        for name in ("dropout_p", "confidence", "nms_iou", "match_iou"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {value}")
        if self.strategy not in sampling.STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}")

    def epoch_budget(self, iteration: int) -> int:
        return self.epoch_base + self.epoch_increment * iteration

    def to_dict(self) -> dict:
        return {
            "passes_n": self.passes_n,
            "dropout_p": self.dropout_p,
            "confidence": self.confidence,
            "nms_iou": self.nms_iou,
            "match_iou": self.match_iou,
            "batch_size": self.batch_size,
            "iterations": self.iterations,
            "epoch_base": self.epoch_base,
            "epoch_increment": self.epoch_increment,
            "strategy": self.strategy,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True)
class ActiveLearningState:
    iteration: int
    training_ids: tuple[str, ...]
    pool_ids: tuple[str, ...]
    history: tuple[dict, ...] = ()

    def __post_init__(self) -> None:
        overlap = set(self.training_ids) & set(self.pool_ids)
        if overlap:
            raise ValidationError(f"training set and pool overlap: {sorted(overlap)[:5]}")

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "training_ids": list(self.training_ids),
            "pool_ids": list(self.pool_ids),
            "history": list(self.history),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ActiveLearningState":
        return cls(
            iteration=int(doc["iteration"]),
            training_ids=tuple(doc["training_ids"]),
            pool_ids=tuple(doc["pool_ids"]),
            history=tuple(doc["history"]),
        )


# ---------------------------------------------------------------------------
# adapters


class DetectorAdapter(ABC):
    """File-contract boundary to whatever produces detections and trains."""

    @abstractmethod
    def fulfill_detection_request(self, request_path: Path, output_path: Path) -> None:
        """Produce a detections file for the images named in the request.

        Must write ``output_path`` in the detections format and touch
        ``output_path.done`` on success.
        """

    @abstractmethod
    def fulfill_training_request(self, request_path: Path) -> None:
        """Retrain on the request's training set with its epoch budget."""


class SimulatorDetectorAdapter(DetectorAdapter):
    """Fulfils the adapter contract in-process with the synthetic detector."""

    def __init__(self, world: SyntheticWorld, run_dir: str | Path):
        self.world = world
        self.sim_dir = Path(run_dir) / "sim"
        self.sim_dir.mkdir(parents=True, exist_ok=True)

    def _skill_path(self, iteration: int) -> Path:
        return self.sim_dir / f"skill_iter_{iteration}.json"

    def load_skill(self, iteration: int) -> SkillState:
        path = self._skill_path(iteration)
        if not path.exists():
            raise AdapterError(f"no simulator skill state for iteration {iteration} at {path}")
        with open(path, "r", encoding="utf-8") as fh:
            return SkillState.from_dict(json.load(fh))

    def save_skill(self, skill: SkillState, iteration: int) -> None:
        _atomic_write_json(skill.to_dict(), self._skill_path(iteration))

    def initialize(self, initial_training_ids: Sequence[str], base: SkillState | None = None) -> None:
        """Emulate step 1: train a fresh model on the initial training set."""
        skill = base if base is not None else SkillState.fresh(len(self.world.catalog))
        gt = self.world.ground_truth()
        skill = train_update(skill, (gt[i] for i in initial_training_ids))
        self.save_skill(skill, 0)

    def fulfill_detection_request(self, request_path: Path, output_path: Path) -> None:
        with open(request_path, "r", encoding="utf-8") as fh:
            request = json.load(fh)
        skill = self.load_skill(request["iteration"])
        images = [
            simulate_passes(
                self.world,
                skill,
                image_id,
                request["passes"],
                request["pass_seed"],
                request["confidence"],
                request["nms_iou"],
            )
            for image_id in request["image_ids"]
        ]
        save_image_passes(images, output_path)
        Path(str(output_path) + ".done").touch()

    def fulfill_training_request(self, request_path: Path) -> None:
        with open(request_path, "r", encoding="utf-8") as fh:
            request = json.load(fh)
        iteration = request["iteration"]
        skill = self.load_skill(iteration - 1)
        gt = self.world.ground_truth()
        skill = train_update(skill, (gt[i] for i in request["new_image_ids"]))
        # the epoch budget is recorded in the request for real trainers; the
        # simulator's skill update does not depend on it
        self.save_skill(skill, iteration)


class FileWaitAdapter(DetectorAdapter):
    """Waits for an external process to fulfil requests via the file contract."""

    def __init__(self, timeout: float = 3600.0, poll_interval: float = 0.5):
        self.timeout = timeout
        self.poll_interval = poll_interval

    def _wait(self, sentinel: Path) -> None:
        deadline = time.monotonic() + self.timeout
        while not sentinel.exists():
            if time.monotonic() > deadline:
                raise AdapterError(f"timed out waiting for {sentinel}")
            time.sleep(self.poll_interval)

    def fulfill_detection_request(self, request_path: Path, output_path: Path) -> None:
        self._wait(Path(str(output_path) + ".done"))

    def fulfill_training_request(self, request_path: Path) -> None:
        self._wait(Path(str(request_path) + ".done"))


# ---------------------------------------------------------------------------
# run directory plumbing


def _atomic_write_json(doc: dict, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def _write_id_file(ids: Sequence[str], path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for image_id in ids:
            fh.write(image_id + "\n")
    os.replace(tmp, path)


@contextmanager
def run_lock(run_dir: Path):
    """Exclusive ownership of a run directory via an O_EXCL lock file."""
    lock_path = run_dir / "LOCK"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise BoxalError(f"run directory is locked by another process: {lock_path}") from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        lock_path.unlink(missing_ok=True)


def _log_event(run_dir: Path, message: str) -> None:
    stamp = datetime.now(timezone.utc).isoformat()
    with open(run_dir / "events.log", "a", encoding="utf-8") as fh:
        fh.write(f"{stamp} {message}\n")


def state_path(run_dir: Path, iteration: int) -> Path:
    return Path(run_dir) / "state" / f"iter_{iteration}.json"


def load_state(run_dir: str | Path, iteration: int | None = None) -> ActiveLearningState:
    """Load the state of a given iteration, or the latest one."""
    run_dir = Path(run_dir)
    if iteration is None:
        files = sorted((run_dir / "state").glob("iter_*.json"))
        if not files:
            raise BoxalError(f"no persisted state under {run_dir / 'state'}")
        iteration = max(int(f.stem.split("_")[1]) for f in files)
    with open(state_path(run_dir, iteration), "r", encoding="utf-8") as fh:
        return ActiveLearningState.from_dict(json.load(fh))


def load_config(run_dir: str | Path) -> RunConfig:
    with open(Path(run_dir) / "config.json", "r", encoding="utf-8") as fh:
        return RunConfig.from_dict(json.load(fh))


def init_run(
    manifest: DatasetManifest,
    config: RunConfig,
    run_dir: str | Path,
    ground_truth: Mapping[str, GroundTruthImage] | None = None,
) -> ActiveLearningState:
    """Create the run directory and persist iteration-0 state."""
    run_dir = Path(run_dir)
    for sub in ("state", "requests", "detections", "samples"):
        (run_dir / sub).mkdir(parents=True, exist_ok=True)
    _atomic_write_json(config.to_dict(), run_dir / "config.json")
    save_manifest(manifest, run_dir / "manifest.json")
    if ground_truth is not None:
        missing = manifest.all_ids - set(ground_truth)
        if missing:
            raise ValidationError(f"ground truth missing for {len(missing)} manifest images")
        save_ground_truth(ground_truth, run_dir / "ground_truth.jsonl")
    state = ActiveLearningState(
        iteration=0,
        training_ids=manifest.initial_training,
        pool_ids=manifest.pool,
    )
    _write_id_file(state.training_ids, run_dir / "trainset_iter_0.txt")
    _atomic_write_json(state.to_dict(), state_path(run_dir, 0))
    _log_event(run_dir, f"init |T_0|={len(state.training_ids)} |P_0|={len(state.pool_ids)}")
    return state


def compare_sampled_vs_remaining(
    per_image_f1: Mapping[str, float], sampled_ids: Sequence[str]
) -> TTestResult:
    """t-test of per-image F1 between sampled images and the rest of the pool."""
    sampled = set(sampled_ids)
    x = [f1 for image_id, f1 in per_image_f1.items() if image_id in sampled]
    y = [f1 for image_id, f1 in per_image_f1.items() if image_id not in sampled]
    return ttest_two_sided(x, y)


def _request_detections(
    run_dir: Path,
    adapter: DetectorAdapter,
    config: RunConfig,
    iteration: int,
    image_ids: Sequence[str],
    tag: str,
) -> dict[str, ImagePasses]:
    request_path = run_dir / "requests" / f"{tag}.json"
    output_path = run_dir / "detections" / f"{tag}.jsonl"
    _atomic_write_json(
        {
            "iteration": iteration,
            "image_ids": list(image_ids),
            "passes": config.passes_n,
            "dropout_p": config.dropout_p,
            "confidence": config.confidence,
            "nms_iou": config.nms_iou,
            "pass_seed": sampling.substream_seed(config.seed, iteration),
        },
        request_path,
    )
    adapter.fulfill_detection_request(request_path, output_path)
    if not Path(str(output_path) + ".done").exists():
        raise AdapterError(f"adapter did not signal completion for {output_path}")
    images = {
        img.image_id: apply_thresholds(img, config.confidence, config.nms_iou)
        for img in load_image_passes(output_path, expected_n=config.passes_n)
    }
    missing = set(image_ids) - set(images)
    if missing:
        raise AdapterError(f"adapter omitted {len(missing)} requested images, e.g. {sorted(missing)[:3]}")
    return images


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return format(value, ".9g")


def _evaluate_test_set(
    detections: Mapping[str, ImagePasses],
    manifest: DatasetManifest,
    gt: Mapping[str, GroundTruthImage],
    match_iou: float,
) -> float | None:
    if not manifest.test:
        return None
    preds_by_image = {
        image_id: consolidate(group_passes(detections[image_id], match_iou))
        for image_id in manifest.test
    }
    gt_by_image = {image_id: gt[image_id] for image_id in manifest.test}
    result = coco_map(preds_by_image, gt_by_image, manifest.catalog)
    return result.map_score


def _run_iteration_locked(
    run_dir: Path, adapter: DetectorAdapter, state: ActiveLearningState
) -> ActiveLearningState:
    config = load_config(run_dir)
    manifest = load_manifest(run_dir / "manifest.json")
    gt = load_ground_truth(run_dir / "ground_truth.jsonl", kappa=len(manifest.catalog))
    i = state.iteration
    n_sample = config.batch_size
    if len(state.pool_ids) < n_sample:
        raise ValidationError(
            f"pool has {len(state.pool_ids)} images, cannot sample {n_sample}"
        )
    kappa = len(manifest.catalog)

    wanted = list(state.pool_ids) + [t for t in manifest.test if t not in set(state.pool_ids)]
    detections = _request_detections(run_dir, adapter, config, i, wanted, f"iter_{i}")

    certainties = {
        image_id: image_certainty(detections[image_id], kappa, config.passes_n, config.match_iou)
        for image_id in state.pool_ids
    }
    ranking = sorted(
        ((ic.image_id, ic.c_min) for ic in certainties.values()), key=lambda r: (r[1], r[0])
    )
    if config.strategy == "min_certainty":
        sampled = sampling.sample_min_certainty(ranking, n_sample)
    else:
        sampled = sampling.sample_random(sorted(state.pool_ids), n_sample, config.seed, i)

    per_image_f1 = {
        image_id: f1_image(
            consolidate(group_passes(detections[image_id], config.match_iou)), gt[image_id]
        )
        for image_id in state.pool_ids
    }
    sampled_set = set(sampled)
    sampled_f1 = [per_image_f1[s] for s in sampled]
    remaining_f1 = [f for s, f in per_image_f1.items() if s not in sampled_set]
    if len(sampled_f1) >= 2 and len(remaining_f1) >= 2:
        ttest = compare_sampled_vs_remaining(per_image_f1, sampled)
    else:
        ttest = None
    map_score = _evaluate_test_set(detections, manifest, gt, config.match_iou)

    metrics = {
        "iteration": i,
        "train_size": len(state.training_ids),
        "map": map_score,
        "mean_f1_sampled": sum(sampled_f1) / len(sampled_f1) if sampled_f1 else None,
        "mean_f1_remaining": sum(remaining_f1) / len(remaining_f1) if remaining_f1 else None,
        "t_statistic": ttest.statistic if ttest else None,
        "p_value": ttest.p_value if ttest else None,
        "mean_cmin_sampled": sum(certainties[s].c_min for s in sampled) / len(sampled),
    }
    record = {
        "iteration": i,
        "sampled": [[s, certainties[s].c_min] for s in sampled],
        "metrics": metrics,
        "f1_sampled": sampled_f1,
        "f1_remaining": remaining_f1,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    new_state = ActiveLearningState(
        iteration=i + 1,
        training_ids=state.training_ids + tuple(sampled),
        pool_ids=tuple(p for p in state.pool_ids if p not in sampled_set),
        history=state.history + (record,),
    )

    _write_id_file(sampled, run_dir / "samples" / f"iter_{i + 1}.txt")
    _write_id_file(new_state.training_ids, run_dir / f"trainset_iter_{i + 1}.txt")
    train_request = run_dir / "requests" / f"train_iter_{i + 1}.json"
    _atomic_write_json(
        {
            "iteration": i + 1,
            "epochs": config.epoch_budget(i + 1),
            "trainset_file": f"trainset_iter_{i + 1}.txt",
            "new_image_ids": list(sampled),
        },
        train_request,
    )
    adapter.fulfill_training_request(train_request)

    _atomic_write_json(new_state.to_dict(), state_path(run_dir, i + 1))
    _log_event(
        run_dir,
        f"iteration {i} sampled {len(sampled)} images (strategy={config.strategy}); "
        f"|T_{i + 1}|={len(new_state.training_ids)} |P_{i + 1}|={len(new_state.pool_ids)}",
    )
    return new_state


def run_iteration(run_dir: str | Path, adapter: DetectorAdapter) -> ActiveLearningState:
    """Run one sample-annotate-retrain iteration from the latest persisted state."""
    run_dir = Path(run_dir)
    with run_lock(run_dir):
        state = load_state(run_dir)
        return _run_iteration_locked(run_dir, adapter, state)


def run_loop(
    run_dir: str | Path, adapter: DetectorAdapter, iterations: int
) -> ActiveLearningState:
    """Run the loop for a number of iterations and write the log.csv report.

    The report carries one row per completed iteration (metrics measured with
    the model as trained entering that iteration) plus a final row evaluating
    the model after the last retraining.
    """
    run_dir = Path(run_dir)
    with run_lock(run_dir):
        state = load_state(run_dir)
        for _ in range(iterations):
            state = _run_iteration_locked(run_dir, adapter, state)

        config = load_config(run_dir)
        manifest = load_manifest(run_dir / "manifest.json")
        gt = load_ground_truth(run_dir / "ground_truth.jsonl", kappa=len(manifest.catalog))
        final_iter = state.iteration
        detections = _request_detections(
            run_dir, adapter, config, final_iter, list(manifest.test), f"iter_{final_iter}_eval"
        )
        final_map = _evaluate_test_set(detections, manifest, gt, config.match_iou)

        columns = [
            "iteration",
            "train_size",
            "map",
            "mean_f1_sampled",
            "mean_f1_remaining",
            "t_statistic",
            "p_value",
            "mean_cmin_sampled",
        ]
        with open(run_dir / "log.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            for record in state.history:
                writer.writerow(_fmt(record["metrics"][c]) for c in columns)
            final_row = {
                "iteration": final_iter,
                "train_size": len(state.training_ids),
                "map": final_map,
            }
            writer.writerow(_fmt(final_row.get(c)) for c in columns)
        _log_event(run_dir, f"loop complete at iteration {final_iter}")
        return state
