"""
Dataset generation for the learned skills and their CSV format.

CSV files start with a "# schema=<name> schema_version=<n>" comment line followed by the header
"split,group,label,f0,...,f<d-1>".
"""
import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from modules.core import SCHEMA_VERSION, SensorGeometry, ZERO_COMMAND
from modules.learn import feature_vector, frame_features, pool_trial
from modules.percept import PerceptConfig
from modules.pipeline import SensorPipeline, SimStream
from modules.scenarios import STIR_FRAMES, STIR_MOVEMENTS, SUBSTANCES, PressScene, scenario_stir
from modules.sim import SkinModel
from modules.tracking import BlobParams, KalmanConfig

PRESS_EPISODES = 20
PRESS_EPISODE_SECONDS = 5
PRESS_TRAIN_EPISODES = 16
PRESS_RAMP_FRAMES = 30
PRESS_PEAK_RANGE = (2.0, 10.0)
STIR_TRIALS = 120
STIR_TRAIN_PER_CLASS = 24

log = logging.getLogger()


class DatasetError(Exception):
    """Generic dataset exception."""

    ...


@dataclass
class Dataset:
    """
    Samples with labels, a train/test split and a group id per sample (press episode or stirring trial).
    """

    name: str
    X: np.ndarray
    y: np.ndarray
    train: np.ndarray
    groups: np.ndarray
    classes: List[str] = field(default_factory=list)

    @property
    def X_train(self) -> np.ndarray:
        return self.X[self.train]

    @property
    def y_train(self) -> np.ndarray:
        return self.y[self.train]

    @property
    def X_test(self) -> np.ndarray:
        return self.X[~self.train]

    @property
    def y_test(self) -> np.ndarray:
        return self.y[~self.train]

    @property
    def force_range(self) -> float:
        return float(self.y.max() - self.y.min())


def gen_press_dataset(
    geometry: SensorGeometry,
    skin: SkinModel,
    rng: np.random.Generator,
    material: str = "wood",
    episodes: int = PRESS_EPISODES,
    train_episodes: int = PRESS_TRAIN_EPISODES,
    kalman: KalmanConfig = KalmanConfig(),
    percept: PerceptConfig = PerceptConfig(),
    blob: BlobParams = BlobParams(),
) -> Dataset:
    """
    Record pressing episodes against a scale through the full tracking pipeline.

    Every episode lasts 5 s at the frame rate and follows a trapezoid (ramp up, hold, ramp down) to a random peak.
    Peaks are drawn one per equal-width bin of the peak range, in shuffled order. Features are per-frame
    FeatureVectors with the size-ratio block; labels are the scale's normal force. Whole episodes go to either split,
    and the episodes with the lowest and highest peak always train so test forces stay inside the training range.

    :param material: object material scaling the skin response
    :param episodes: number of pressing episodes
    :param train_episodes: episodes in the training split
    :return: Dataset with one row per frame, grouped by episode
    :raise DatasetError: if the split leaves either side empty
    """
    if not 0 < train_episodes < episodes:
        raise DatasetError(f"Need 0 < train episodes < episodes, got {train_episodes} of {episodes}")
    episode_frames = int(round(PRESS_EPISODE_SECONDS / kalman.dt))
    ramp = PRESS_RAMP_FRAMES
    hold = episode_frames - 2 * ramp
    if hold < 0:
        raise DatasetError(f"Episodes of {episode_frames} frames are too short for {ramp}-frame ramps")
    edges = np.linspace(*PRESS_PEAK_RANGE, episodes + 1)
    peaks = rng.permutation(rng.uniform(edges[:-1], edges[1:]))
    scene = PressScene(geometry, skin, rng, peaks=peaks, ramp=ramp, hold=hold, material=material)
    scene.name = f"press-{material}"
    stream = SimStream(scene, SensorPipeline(geometry, kalman, percept, blob))

    rows, labels, groups = [], [], []
    for t in range(scene.n_frames):
        bundle = stream.observe()
        features = feature_vector(bundle.field, bundle.object, include_ratio=True, n_markers=geometry.n_markers)
        rows.append(features.values)
        labels.append(scene.normal_force(t, stream.plant))
        groups.append(scene.episode(t))
        stream.apply(ZERO_COMMAND)

    candidates = np.arange(episodes)
    if train_episodes >= 2:
        candidates = np.setdiff1d(candidates, [np.argmin(peaks), np.argmax(peaks)])
    test_episodes = rng.permutation(candidates)[: episodes - train_episodes]
    group_arr = np.array(groups)
    log.info(f"Press dataset ({material}): {len(rows)} frames, test episodes {sorted(test_episodes.tolist())}")
    return Dataset(
        name=f"press-{material}",
        X=np.array(rows),
        y=np.array(labels, dtype=float),
        train=~np.isin(group_arr, test_episodes),
        groups=group_arr,
    )


def stir_schedule(trials: int = STIR_TRIALS) -> List[Tuple[str, int]]:
    """(substance, movement) per trial: movements in blocks, substances cycling inside each block."""
    per_movement = max(1, trials // STIR_MOVEMENTS)
    return [(SUBSTANCES[k % len(SUBSTANCES)], min(k // per_movement, STIR_MOVEMENTS - 1) + 1) for k in range(trials)]


def gen_stir_dataset(
    geometry: SensorGeometry,
    skin: SkinModel,
    rng: np.random.Generator,
    trials: int = STIR_TRIALS,
    train_per_class: int = STIR_TRAIN_PER_CLASS,
    frames: int = STIR_FRAMES,
    pooling: str = "mean_std",
) -> Dataset:
    """
    Simulate stirring trials and pool each into one feature row.

    The split is stratified: `train_per_class` trials of every substance go to training, the rest to testing.

    :return: Dataset with one row per trial, labels indexing SUBSTANCES
    :raise DatasetError: if a substance has too few trials for the split
    """
    schedule = stir_schedule(trials)
    rows, labels = [], []
    for substance, movement in schedule:
        trial = scenario_stir(geometry, skin, substance, movement, rng, frames)
        rows.append(pool_trial(frame_features(trial.deviations, trial.objects), pooling))
        labels.append(trial.label)
    y = np.array(labels, dtype=int)
    train = np.zeros(y.size, dtype=bool)
    for label in range(len(SUBSTANCES)):
        members = np.flatnonzero(y == label)
        if members.size <= train_per_class:
            raise DatasetError(f"Only {members.size} trials of {SUBSTANCES[label]} for {train_per_class} training")
        train[rng.permutation(members)[:train_per_class]] = True
    log.info(f"Stir dataset: {y.size} trials, {int(train.sum())} train / {int((~train).sum())} test")
    return Dataset(
        name="stir",
        X=np.array(rows),
        y=y.astype(float),
        train=train,
        groups=np.arange(y.size),
        classes=list(SUBSTANCES),
    )


def dataset_to_csv(dataset: Dataset) -> str:
    buffer = io.StringIO()
    buffer.write(f"# schema={dataset.name} schema_version={SCHEMA_VERSION} classes={'|'.join(dataset.classes)}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["split", "group", "label", *(f"f{i}" for i in range(dataset.X.shape[1]))])
    for row, label, is_train, group in zip(dataset.X, dataset.y, dataset.train, dataset.groups):
        writer.writerow(["train" if is_train else "test", int(group), repr(float(label)), *map(repr, row.tolist())])
    return buffer.getvalue()


def _parse_comment(line: str) -> dict:
    if not line.startswith("#"):
        raise DatasetError("Dataset CSV must start with a schema comment")
    fields = dict(part.split("=", 1) for part in line[1:].split() if "=" in part)
    if int(fields.get("schema_version", -1)) != SCHEMA_VERSION:
        raise DatasetError(f"Unsupported dataset schema version {fields.get('schema_version')}")
    return fields


def dataset_from_csv(text: str) -> Dataset:
    """
    :raise DatasetError: on a missing schema line, a wrong version or malformed rows
    """
    lines = text.splitlines()
    if not lines:
        raise DatasetError("Empty dataset file")
    meta = _parse_comment(lines[0])
    reader = csv.reader(lines[1:])
    header = next(reader, None)
    if header is None or header[:3] != ["split", "group", "label"]:
        raise DatasetError(f"Unexpected dataset header {header}")
    X, y, train, groups = [], [], [], []
    for number, row in enumerate(reader, start=3):
        if len(row) != len(header):
            raise DatasetError(f"Line {number}: expected {len(header)} fields, got {len(row)}")
        try:
            train.append(row[0] == "train")
            groups.append(int(row[1]))
            y.append(float(row[2]))
            X.append([float(v) for v in row[3:]])
        except ValueError as e:
            raise DatasetError(f"Line {number}: {e}")
    classes = [c for c in meta.get("classes", "").split("|") if c]
    return Dataset(
        name=meta.get("schema", "dataset"),
        X=np.array(X, dtype=float).reshape(len(X), len(header) - 3),
        y=np.array(y),
        train=np.array(train, dtype=bool),
        groups=np.array(groups, dtype=int),
        classes=classes,
    )


def read_dataset(path: Path) -> Dataset:
    try:
        return dataset_from_csv(Path(path).read_text())
    except OSError as e:
        raise DatasetError(f"Cannot read dataset {path}: {e}")


def class_labels(dataset: Dataset, names: Optional[Sequence[str]] = None) -> np.ndarray:
    """Integer labels, checked against the class list."""
    labels = dataset.y.astype(int)
    classes = list(names) if names is not None else dataset.classes
    if not classes or labels.min() < 0 or labels.max() >= len(classes):
        raise DatasetError(f"Labels do not index the classes {classes}")
    return labels
