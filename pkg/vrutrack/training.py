# Copyright (c) 2026 vrutrack authors.
# Use of this source code is governed by a MIT License
# license that can be found in the LICENSE file.

"""
Supervision for the association network: ground-truth association labels,
the multi-task loss and the optimization loop.

Targets are expressed in the network's output space: position as an offset
from the detection centroid (`anchor`), velocity absolute.
"""

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, softmax

from vrutrack import protocol
from vrutrack.association import CandidatePair, greedy_assign
from vrutrack.core import Detection, polygon_iou
from vrutrack.features import extract_pairs
from vrutrack.mixins import GroupedRecordMixin, RecordMixin
from vrutrack.network import SequenceStep
from vrutrack.tracker import Tracker, TrackerConfig

logger = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, epoch, batch, last_loss):
        self.epoch = epoch
        self.batch = batch
        self.last_loss = last_loss

    def __str__(self):
        return (
            f"training diverged in epoch {self.epoch}, batch {self.batch} "
            f"(last finite loss {self.last_loss})"
        )


@dataclass
class LossWeights:
    w_score: float = protocol.w_score
    w_state: float = protocol.w_state
    learn_state: bool = True

    def __post_init__(self):
        if self.w_score < 0 or self.w_state < 0:
            raise ValueError("loss weights must be non-negative")

    @property
    def effective_w_state(self):
        return self.w_state if self.learn_state else 0.0


@dataclass(frozen=True, eq=False)
class TrainingExample(RecordMixin):
    """
    One supervised (track, detection) pair.

    `target_score` and `target_state` are only meaningful for positives
    against a real detection; null positives and negatives carry zeros.
    `track_key` identifies the track whose recurrent memory the pair uses.
    """

    tag = protocol.ext_vru_example

    sequence_id: int
    frame_index: int
    track_key: int
    target_assoc: bool
    target_score: float
    is_null: bool
    target_state: tuple
    anchor: tuple
    features: np.ndarray

    def __post_init__(self):
        if self.target_score < 0:
            raise ValueError("target_score must be non-negative")
        features = np.asarray(self.features, dtype=float)
        if features.shape != (protocol.feature_dim,):
            raise ValueError(f"expected {protocol.feature_dim} features, got {features.shape}")
        object.__setattr__(self, "features", features)

    @property
    def has_targets(self):
        return self.target_assoc and not self.is_null

    @property
    def state_target(self):
        """Target in output space: offset position, absolute velocity."""
        x, y, vx, vy = self.target_state
        ax, ay = self.anchor
        return np.array([x - ax, y - ay, vx, vy])

    def record_values(self):
        return (
            self.sequence_id,
            self.frame_index,
            self.track_key,
            self.target_assoc,
            self.target_score,
            self.is_null,
            *self.target_state,
            *self.anchor,
            *self.features.tolist(),
        )


class Dataset(GroupedRecordMixin):
    """Examples plus stacked arrays for batched loss evaluation."""

    def __init__(self, examples=()):
        self.examples = list(examples)
        n = len(self.examples)
        self.features = np.array([e.features for e in self.examples], dtype=float).reshape(
            n, protocol.feature_dim
        )
        self.target_assoc = np.array([e.target_assoc for e in self.examples], dtype=bool)
        self.target_score = np.array([e.target_score for e in self.examples], dtype=float)
        self.has_targets = np.array([e.has_targets for e in self.examples], dtype=bool)
        self.state_target = np.array(
            [e.state_target for e in self.examples], dtype=float
        ).reshape(n, 4)
        self.sequence_id = np.array([e.sequence_id for e in self.examples], dtype=int)
        self.frame_index = np.array([e.frame_index for e in self.examples], dtype=int)
        self.track_key = np.array([e.track_key for e in self.examples], dtype=int)

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __add__(self, other):
        return Dataset(self.examples + other.examples)

    def subset(self, index):
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return Dataset([self.examples[i] for i in index.tolist()])

    def sequences(self):
        return sorted(set(self.sequence_id.tolist()))

    def chains(self):
        """
        Row indices per (sequence, track), grouped by frame in frame order:
        {(sequence_id, track_key): [[rows at frame a], [rows at frame b], ...]}.
        """
        frames = defaultdict(lambda: defaultdict(list))
        for row, (seq, key, frame) in enumerate(
            zip(self.sequence_id.tolist(), self.track_key.tolist(), self.frame_index.tolist())
        ):
            frames[(seq, key)][frame].append(row)
        return {
            chain: [rows for _, rows in sorted(by_frame.items())]
            for chain, by_frame in sorted(frames.items())
        }

    def carrier(self, rows):
        """Row whose memory a track keeps: its best real positive, or None."""
        best = None
        for row in rows:
            if self.has_targets[row]:
                if best is None or self.target_score[row] < self.target_score[best]:
                    best = row
        return best


def _box_at(track, x, y):
    return track.last_box.moved_to(x, y)


def _frame_examples(
    objects,
    detections,
    labels_prev,
    labels_now,
    r,
    rng,
    now,
    sensor,
    max_negatives,
    sequence_id,
    frame_index,
):
    """Examples for one frame plus the (track, detection, y_score) positives."""
    by_id_now = {label.track_id: label for label in labels_now}
    rows = []  # (track index, detection, target_assoc, y_score, label)
    positives = []
    skipped = 0

    for i, obj in enumerate(objects):
        prev = obj.previous_state
        box_prev = _box_at(obj, prev.x, prev.y)
        best_iou, best = 0.0, None
        for label in labels_prev:
            iou = polygon_iou(box_prev, label.box)
            if iou > best_iou:
                best_iou, best = iou, label
        if best is None:
            skipped += 1
            continue

        pred = obj.estimate
        gated = [
            d
            for d in detections
            if not d.is_null and math.hypot(pred.x - d.box.cx, pred.y - d.box.cy) < r
        ]
        label_now = by_id_now.get(best.track_id)
        prev_error = math.hypot(best.box.cx - prev.x, best.box.cy - prev.y)
        matched, rejected = [], []
        for d in gated:
            if label_now is not None and polygon_iou(label_now.box, d.box) >= protocol.label_iou_threshold:
                y_score = prev_error + math.hypot(label_now.box.cx - d.box.cx, label_now.box.cy - d.box.cy)
                matched.append((d, y_score))
            else:
                rejected.append(d)

        if matched:
            for d, y_score in matched:
                rows.append((i, d, True, y_score, label_now))
                positives.append((obj, d, y_score))
        else:
            null = Detection.null(now, pred.x, pred.y, obj.category, sensor, id=f"null-{obj.id}")
            rows.append((i, null, True, 0.0, None))

        n_neg = min(len(rejected), max_negatives * max(len(matched), 1))
        if n_neg:
            for k in sorted(rng.choice(len(rejected), size=n_neg, replace=False).tolist()):
                rows.append((i, rejected[k], False, 0.0, None))

    if skipped:
        logger.debug("frame %d: skipped %d objects without an overlapping label", frame_index, skipped)
    if not rows:
        return [], positives

    pair_detections = [row[1] for row in rows]
    features = extract_pairs(
        objects,
        pair_detections,
        [row[0] for row in rows],
        np.arange(len(rows)),
        now,
    )
    examples = []
    for k, (i, d, assoc, y_score, label) in enumerate(rows):
        is_null = d.is_null
        if label is not None:
            state = (label.box.cx, label.box.cy, label.vx, label.vy)
        else:
            state = (0.0, 0.0, 0.0, 0.0)
        examples.append(
            TrainingExample(
                sequence_id=sequence_id,
                frame_index=frame_index,
                track_key=objects[i].id,
                target_assoc=assoc,
                target_score=float(y_score),
                is_null=is_null,
                target_state=tuple(float(v) for v in state),
                anchor=(float(d.box.cx), float(d.box.cy)),
                features=features[k],
            )
        )
    return examples, positives


def generate_labels(
    objects,
    detections,
    labels_prev,
    labels_now,
    r=protocol.gating_radius,
    rng=None,
    now=None,
    sensor=protocol.lidar,
    max_negatives=3,
    sequence_id=0,
    frame_index=0,
):
    """
    Ground-truth association examples for tracked `objects` (predicted to
    `now`, with their previous-frame estimate in `previous_state`) against
    the gated `detections`.

    Each object is tied to the label it overlaps most at the previous frame.
    Gated detections overlapping that label's current box by IoU >= 0.1 are
    positives scored by
        |label_prev - object_prev| + |label_now - detection|
    (centroid distances). An object without positives gets one positive
    against a null detection. Up to `max_negatives` per positive are sampled
    from the remaining gated detections.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    if now is None:
        now = detections[0].time if detections else labels_now[0].time
    examples, _ = _frame_examples(
        objects,
        detections,
        labels_prev,
        labels_now,
        r,
        rng,
        now,
        sensor,
        max_negatives,
        sequence_id,
        frame_index,
    )
    return examples


def oracle_assignment(positives, tracks, detections):
    """1-to-1 assignment taking each object's lowest-score positive first."""
    pairs = [CandidatePair(obj, d, 0.0, score=y) for obj, d, y in positives]
    return greedy_assign(pairs, tracks, list(detections))


def label_sequence(scenario, tracker_config=None, rng=None, sequence_id=0, max_negatives=3):
    """
    Runs a tracker whose associations come from the labels over `scenario`
    and collects the examples generated at every frame.
    """
    config = tracker_config or TrackerConfig()
    if config.is_learned:
        raise ValueError("label generation uses a classical tracker configuration")
    rng = rng if rng is not None else np.random.default_rng(sequence_id)
    tracker = Tracker(config)
    examples = []
    labels_prev = None
    for frame_index, (frame, labels) in enumerate(zip(scenario.frames, scenario.label_frames)):
        if labels.time != frame.time:
            raise ValueError(f"labels at {labels.time} do not align with frame at {frame.time}")
        tracker.predict(frame.time)
        positives = []
        if labels_prev is not None and tracker.tracks:
            frame_examples, positives = _frame_examples(
                tracker.tracks,
                frame.detections,
                labels_prev.labels,
                labels.labels,
                config.gating_radius,
                rng,
                frame.time,
                frame.sensor,
                max_negatives,
                sequence_id,
                frame_index,
            )
            examples.extend(frame_examples)
        tracker.commit(frame.time, oracle_assignment(positives, tracker.tracks, frame.detections))
        labels_prev = labels
    logger.debug("sequence %d: %d examples", sequence_id, len(examples))
    return examples


def build_dataset(scenarios, tracker_config=None, seed=0, max_negatives=3):
    examples = []
    for index, scenario in enumerate(scenarios):
        rng = np.random.default_rng([seed, index])
        examples.extend(label_sequence(scenario, tracker_config, rng, index, max_negatives))
    dataset = Dataset(examples)
    logger.info(
        "built dataset: %d sequences, %d examples (%d positive)",
        len(scenarios),
        len(dataset),
        int(dataset.target_assoc.sum()),
    )
    return dataset


def split_by_sequence(dataset, fraction=0.2, seed=0):
    """(train, validation) with whole sequences on either side."""
    sequences = dataset.sequences()
    if len(sequences) < 2 or fraction <= 0:
        return dataset, Dataset()
    rng = np.random.default_rng(seed)
    shuffled = rng.permutation(sequences).tolist()
    n_val = min(len(sequences) - 1, max(1, int(round(fraction * len(sequences)))))
    held_out = np.isin(dataset.sequence_id, shuffled[:n_val])
    return dataset.subset(~held_out), dataset.subset(held_out)


# Losses


def _target_index(target_assoc):
    return np.where(np.asarray(target_assoc, dtype=bool), 0, 1)


def assoc_loss(output, target, weights=None):
    """
    Cross-entropy of the softmaxed association logits plus, for positives
    against a real detection, w_score * (score - target_score)^2.
    """
    weights = weights or LossWeights()
    log_p = log_softmax(output.assoc_logits, axis=-1)
    loss = -log_p[0 if target.target_assoc else 1]
    if target.has_targets:
        loss += weights.w_score * (output.score - target.target_score) ** 2
    return float(loss)


def state_loss(output, target_state):
    """Gaussian negative log-likelihood (without the constant) over the 4 state elements."""
    residual = output.state - np.asarray(target_state, dtype=float)
    log_sigma = output.log_sigma
    return float(np.sum(0.5 * residual**2 * np.exp(-2.0 * log_sigma) + log_sigma))


def total_loss(output, target, weights=None):
    weights = weights or LossWeights()
    loss = assoc_loss(output, target, weights)
    if target.has_targets:
        loss += weights.effective_w_state * state_loss(output, target.state_target)
    return loss


def loss_and_grad(raw, target_assoc, target_score, has_targets, state_target, weights, normalizer=None):
    """
    Summed total loss over a batch of raw outputs (n, 11) and its gradient
    with respect to `raw`, both divided by `normalizer` (default n).
    """
    raw = np.asarray(raw, dtype=float)
    n = len(raw)
    normalizer = normalizer or max(n, 1)
    logits = raw[:, 0:2]
    score = raw[:, 2]
    state = raw[:, 3:7]
    log_sigma = raw[:, 7:11]
    idx = _target_index(target_assoc)
    rows = np.arange(n)
    mask = np.asarray(has_targets, dtype=float)
    w_state = weights.effective_w_state

    log_p = log_softmax(logits, axis=1)
    l_prob = -log_p[rows, idx]
    score_err = score - target_score
    l_score = score_err**2 * mask
    residual = state - state_target
    inv_var = np.exp(-2.0 * log_sigma)
    l_state = np.sum(0.5 * residual**2 * inv_var + log_sigma, axis=1) * mask
    loss = np.sum(l_prob + weights.w_score * l_score + w_state * l_state) / normalizer

    grad = np.zeros_like(raw)
    grad[:, 0:2] = softmax(logits, axis=1)
    grad[rows, idx] -= 1.0
    grad[:, 2] = 2.0 * score_err * weights.w_score * mask
    grad[:, 3:7] = residual * inv_var * (w_state * mask)[:, None]
    grad[:, 7:11] = (1.0 - residual**2 * inv_var) * (w_state * mask)[:, None]
    return float(loss), grad / normalizer


def _batch_loss_and_grad(raw, dataset, rows, weights, normalizer=None):
    return loss_and_grad(
        raw,
        dataset.target_assoc[rows],
        dataset.target_score[rows],
        dataset.has_targets[rows],
        dataset.state_target[rows],
        weights,
        normalizer,
    )


# Optimization


class MomentumSGD:
    def __init__(self, learning_rate=1e-3, momentum=0.9, clip_norm=5.0):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity = None

    def step(self, params, grad):
        """Updates the flat parameter vector `params` in place."""
        norm = float(np.linalg.norm(grad))
        if self.clip_norm and norm > self.clip_norm:
            grad = grad * (self.clip_norm / norm)
        if self.velocity is None:
            self.velocity = np.zeros_like(params)
        self.velocity = self.momentum * self.velocity - self.learning_rate * grad
        params += self.velocity
        return norm


@dataclass
class TrainingConfig:
    epochs: int = 30
    batch_size: int = 128
    batch_tracks: int = 32
    learning_rate: float = 1e-3
    momentum: float = 0.9
    lr_decay: float = 0.5
    patience: int = 3
    min_learning_rate: float = 1e-6
    clip_norm: float = 5.0
    window: int = 20
    validation_fraction: float = 0.2
    max_negatives: int = 3
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.batch_tracks < 1 or self.window < 1:
            raise ValueError("epochs, batch sizes and window must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in [0, 1)")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    learning_rate: float


@dataclass
class TrainingHistory:
    records: list = field(default_factory=list)
    best_epoch: int = None

    def append(self, record):
        self.records.append(record)

    @property
    def train_loss(self):
        return [r.train_loss for r in self.records]

    @property
    def val_loss(self):
        return [r.val_loss for r in self.records]

    def to_csv(self, path):
        with open(path, "w", newline="") as fileobj:
            writer = csv.writer(fileobj)
            writer.writerow(["epoch", "train_loss", "val_loss", "val_accuracy", "learning_rate"])
            for r in self.records:
                writer.writerow(
                    [r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_accuracy), repr(r.learning_rate)]
                )


def _lstm_groups(chains, batch_tracks, rng=None):
    keys = list(chains)
    if rng is not None:
        keys = [keys[i] for i in rng.permutation(len(keys)).tolist()]
    for start in range(0, len(keys), batch_tracks):
        yield [chains[k] for k in keys[start : start + batch_tracks]]


def _windows(dataset, group, window):
    """
    Yields lists of `SequenceStep`s (plus the dataset rows of each step) for
    consecutive `window`-frame slices of every chain in `group`.
    """
    longest = max(len(chain) for chain in group)
    for start in range(0, longest, window):
        steps = []
        for offset in range(start, min(start + window, longest)):
            rows, track_index = [], []
            carrier = np.full(len(group), -1)
            for t, chain in enumerate(group):
                if offset >= len(chain):
                    continue
                frame_rows = chain[offset]
                best = dataset.carrier(frame_rows)
                if best is not None:
                    carrier[t] = len(rows) + frame_rows.index(best)
                rows.extend(frame_rows)
                track_index.extend([t] * len(frame_rows))
            if rows:
                rows = np.array(rows)
                step = SequenceStep(dataset.features[rows], np.array(track_index), carrier)
                steps.append((step, rows))
        yield steps


def predict_dataset(net, dataset, batch_tracks=32, window=20):
    """Raw outputs (n, 11) for every example; recurrent nets follow each track's chain."""
    if len(dataset) == 0:
        return np.zeros((0, protocol.output_dim))
    if not net.is_recurrent:
        output, _ = net.forward(dataset.features)
        return output.raw
    raw = np.zeros((len(dataset), protocol.output_dim))
    for group in _lstm_groups(dataset.chains(), batch_tracks):
        memory = None
        for steps in _windows(dataset, group, window):
            outputs, _, memory = net.forward_sequence([s for s, _ in steps], len(group), memory)
            for (_, rows), out in zip(steps, outputs):
                raw[rows] = out
    return raw


def evaluate_dataset(net, dataset, weights=None, batch_tracks=32, window=20):
    """(mean total loss, association accuracy) of `net` on `dataset`."""
    if len(dataset) == 0:
        return math.nan, math.nan
    weights = weights or LossWeights()
    raw = predict_dataset(net, dataset, batch_tracks, window)
    loss, _ = _batch_loss_and_grad(raw, dataset, np.arange(len(dataset)), weights)
    predicted = raw[:, 0] > raw[:, 1]
    accuracy = float(np.mean(predicted == dataset.target_assoc))
    return loss, accuracy


def association_accuracy(net, dataset, batch_tracks=32, window=20):
    return evaluate_dataset(net, dataset, batch_tracks=batch_tracks, window=window)[1]


def _check(loss, epoch, batch, last_finite):
    if not math.isfinite(loss):
        raise DivergenceError(epoch, batch, last_finite)
    return loss


def _mlp_epoch(net, dataset, optimizer, config, rng, epoch):
    order = rng.permutation(len(dataset))
    total, last = 0.0, math.nan
    for batch, start in enumerate(range(0, len(order), config.batch_size)):
        rows = order[start : start + config.batch_size]
        raw, cache = net.forward_with_cache(dataset.features[rows])
        loss, draw = _batch_loss_and_grad(raw, dataset, rows, config.weights)
        last = _check(loss, epoch, batch, last)
        grad = net.backward(cache, draw)
        optimizer.step(net.flat, grad)
        total += loss * len(rows)
    return total / len(dataset)


def _lstm_epoch(net, dataset, optimizer, config, rng, epoch):
    total, last, batch = 0.0, math.nan, 0
    for group in _lstm_groups(dataset.chains(), config.batch_tracks, rng):
        memory = None
        for steps in _windows(dataset, group, config.window):
            seq = [s for s, _ in steps]
            n_rows = sum(len(rows) for _, rows in steps)
            outputs, caches, memory = net.forward_sequence(seq, len(group), memory)
            grads, window_loss = [], 0.0
            for (_, rows), raw in zip(steps, outputs):
                loss, draw = _batch_loss_and_grad(raw, dataset, rows, config.weights, n_rows)
                window_loss += loss
                grads.append(draw)
            last = _check(window_loss, epoch, batch, last)
            grad = net.backward_sequence(seq, caches, grads, len(group))
            optimizer.step(net.flat, grad)
            total += window_loss * n_rows
            batch += 1
    return total / len(dataset)


def train(dataset, net, config=None, validation=None):
    """
    Fits `net` in place and returns (net, history). `net` ends up holding
    the weights with the lowest validation loss.
    """
    config = config or TrainingConfig()
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if validation is None:
        dataset, validation = split_by_sequence(dataset, config.validation_fraction, config.seed)
    rng = np.random.default_rng(config.seed)
    optimizer = MomentumSGD(config.learning_rate, config.momentum, config.clip_norm)
    run_epoch = _lstm_epoch if net.is_recurrent else _mlp_epoch
    history = TrainingHistory()
    best_loss, best_params, stale = math.inf, net.get_flat(), 0

    for epoch in range(1, config.epochs + 1):
        train_loss = run_epoch(net, dataset, optimizer, config, rng, epoch)
        if len(validation):
            val_loss, val_accuracy = evaluate_dataset(
                net, validation, config.weights, config.batch_tracks, config.window
            )
        else:
            val_loss, val_accuracy = evaluate_dataset(
                net, dataset, config.weights, config.batch_tracks, config.window
            )
        if not math.isfinite(val_loss):
            raise DivergenceError(epoch, None, best_loss)
        history.append(EpochRecord(epoch, train_loss, val_loss, val_accuracy, optimizer.learning_rate))
        logger.info(
            "epoch %d: train %.5f, validation %.5f, accuracy %.4f, lr %.2g",
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
            optimizer.learning_rate,
        )
        if val_loss < best_loss:
            best_loss, best_params, stale = val_loss, net.get_flat(), 0
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.patience and optimizer.learning_rate > config.min_learning_rate:
                optimizer.learning_rate *= config.lr_decay
                stale = 0
                logger.info("validation plateau, learning rate now %.2g", optimizer.learning_rate)

    net.set_flat(best_params)
    return net, history
