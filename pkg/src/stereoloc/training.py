"""Training loop: augmentation, equal-weight joint objective, checkpointing."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ._rng import substream
from .errors import DataError, NumericError
from .model import LossWeights, composed_loss, decode
from .nn import Adam, Network, NetworkSpec, load_checkpoint, save_checkpoint
from .pairs import (PairTable, balance_pairs, flip_table, inject_knowledge, pairs_from_frame,
                    read_pairs, sample_ki_heights)

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "train_total", "train_laplace", "train_ism", "train_angle",
               "val_total", "val_laplace", "val_ism", "val_angle", "val_ism_acc", "val_ism_bal_acc")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 400
    batch_size: int = 512
    lr: float = 1e-3
    clip_norm: float = 5.0
    w_laplace: float = 1.0
    w_ism: float = 1.0
    w_angle: float = 1.0
    ki: bool = True
    ki_multiplier: int = 1
    flip: bool = True
    mask_false_distance: bool = False
    null_fraction: float = 0.1
    hidden: int = 256
    n_blocks: int = 2
    dropout: float = 0.2
    lr_milestones: tuple = ()
    lr_gamma: float = 0.1
    bn_recalibrate: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 2 or self.lr <= 0 or self.clip_norm <= 0:
            raise ValueError("epochs, batch_size, lr and clip_norm must be positive (batch_size >= 2)")
        for w in (self.w_laplace, self.w_ism, self.w_angle):
            if not (np.isfinite(w) and w >= 0):
                raise ValueError("loss weights must be finite and non-negative")
        if self.ki_multiplier < 0:
            raise ValueError("ki_multiplier must be non-negative")
        object.__setattr__(self, "lr_milestones", tuple(float(m) for m in self.lr_milestones))
        if any(not 0 < m < 1 for m in self.lr_milestones) or not 0 < self.lr_gamma <= 1:
            raise ValueError("lr_milestones are fractions in (0, 1) and lr_gamma lies in (0, 1]")

    def lr_at(self, epoch):
        """Step schedule: the rate drops by ``lr_gamma`` after each milestone fraction of the run."""
        passed = sum(epoch > m * self.epochs for m in self.lr_milestones)
        return self.lr * self.lr_gamma ** passed

    @property
    def weights(self):
        return LossWeights(self.w_laplace, self.w_ism, self.w_angle)

    def network_spec(self, input_dim=68):
        return NetworkSpec(input_dim=input_dim, hidden=self.hidden, n_blocks=self.n_blocks,
                           dropout=self.dropout, seed=self.seed)

    def to_dict(self):
        d = asdict(self)
        d["lr_milestones"] = list(self.lr_milestones)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def training_pairs(frames, seed=0, null_fraction=0.1, balance=True):
    """Labeled, balanced pairs from frames, plus extra null pairs."""
    pairs = []
    for frame in frames:
        pairs.extend(pairs_from_frame(frame))
    if balance:
        pairs = balance_pairs(pairs, seed)
    if null_fraction > 0:
        rng = substream(seed, "null-pairs")
        for frame in frames:
            extra = [p for p in pairs_from_frame(frame, null_fraction, rng) if p.is_null_pair]
            # frames without right detections already contribute their null pairs
            if frame.right_sets():
                pairs.extend(extra)
    return pairs


def evaluation_pairs(frames):
    pairs = []
    for frame in frames:
        pairs.extend(pairs_from_frame(frame))
    return pairs


def predict_raw(network, features, chunk=8192):
    features = np.asarray(features, dtype=float)
    if len(features) == 0:
        return np.zeros((0, network.spec.output_dim))
    return np.concatenate([network.forward(features[i:i + chunk], "eval")
                           for i in range(0, len(features), chunk)])


def _distance_mask(table, config):
    if config.mask_false_distance:
        return table.ism.astype(float)
    return None


def evaluate_table(network, table, config):
    raw = predict_raw(network, table.features)
    total, _, parts, _ = composed_loss(raw, table.gt, table.ism, config.weights, _distance_mask(table, config))
    p = decode(raw).ism_prob
    pred = p >= 0.5
    truth = table.ism == 1
    acc = float(np.mean(pred == truth)) if len(table) else float("nan")
    tpr = float(np.mean(pred[truth])) if truth.any() else float("nan")
    tnr = float(np.mean(~pred[~truth])) if (~truth).any() else float("nan")
    return {"total": total, **parts, "ism_acc": acc, "ism_bal_acc": 0.5 * (tpr + tnr)}


def _epoch_table(table, config, rig, epoch):
    rng = substream(config.seed, "augment", epoch)
    base = table
    if config.flip:
        flip = rng.random(len(table)) < 0.5
        if flip.any():
            order = np.concatenate([np.flatnonzero(~flip), np.flatnonzero(flip)])
            base = PairTable.concat([table.take(~flip), flip_table(table.take(flip))])
            # restore the original row order so shuffling alone defines batch composition
            base = base.take(np.argsort(order, kind="stable"))
    parts = [base]
    if config.ki:
        for _ in range(config.ki_multiplier):
            parts.append(inject_knowledge(base, sample_ki_heights(rng, len(base)), rig))
    return PairTable.concat(parts) if len(parts) > 1 else base


@dataclass
class TrainResult:
    network: Network
    log: list
    meta: dict


def checkpoint_meta(config, rig):
    return {
        "train_config": config.to_dict(),
        "config_hash": config.digest(),
        "rig": rig.to_dict(),
        # without a trained matching head, pairs are chosen by the tightest interval
        "selection": "ism" if config.w_ism > 0 else "spread",
    }


def train(train_pairs, val_pairs, rig, config=TrainConfig(), out_dir=None, progress=None):
    """Train a network on labeled pairs.

    ``train_pairs`` / ``val_pairs`` are lists of PairSample or PairTables.
    Each epoch flips half of the pairs (left/right swap), appends
    ``ki_multiplier`` knowledge-injected copies, shuffles, and takes Adam
    steps on the equally weighted sum of the Laplace, matching and angle
    losses. With ``out_dir``, writes ``model.ckpt`` and ``train_log.csv``.
    A non-finite loss aborts the run after saving the last good state.
    """
    tr = train_pairs if isinstance(train_pairs, PairTable) else PairTable.from_samples(train_pairs)
    va = val_pairs if isinstance(val_pairs, PairTable) else PairTable.from_samples(val_pairs)
    if len(tr) < 2:
        raise DataError("need at least two training pairs")
    if not ((tr.ism == 1).any() and (tr.ism == 0).any()):
        raise DataError("training pairs must contain both matching labels")
    if np.any(~np.isfinite(tr.gt)) or np.any(tr.gt[:, 0] <= 0):
        raise DataError("every training pair needs a positive ground-truth distance")

    network = Network(config.network_spec(tr.features.shape[1]))
    opt = Adam(network.params(), lr=config.lr, clip_norm=config.clip_norm)
    meta = checkpoint_meta(config, rig)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    last_good = network.state_arrays()
    last_good = {k: v.copy() for k, v in last_good.items()}

    for epoch in range(1, config.epochs + 1):
        opt.lr = config.lr_at(epoch)
        data = _epoch_table(tr, config, rig, epoch)
        order = substream(config.seed, "shuffle", epoch).permutation(len(data))
        sums = {"total": 0.0, "laplace": 0.0, "ism": 0.0, "angle": 0.0}
        seen = 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            if len(idx) < 2:
                continue
            batch = data.take(idx)
            raw = network.forward(batch.features, "train")
            total, grad, parts, _ = composed_loss(raw, batch.gt, batch.ism, config.weights,
                                                  _distance_mask(batch, config))
            if not np.isfinite(total):
                network.load_state_arrays(last_good)
                if out_dir is not None:
                    save_checkpoint(out_dir / "model.ckpt", network, meta)
                    _write_log(out_dir / "train_log.csv", rows)
                raise NumericError(f"non-finite loss at epoch {epoch}; last good state saved")
            network.backward(grad)
            opt.step()
            n = len(idx)
            seen += n
            sums["total"] += total * n
            for k, v in parts.items():
                sums[k] += v * n
        val = evaluate_table(network, va, config) if len(va) else {}
        row = {"epoch": epoch,
               **{f"train_{k}": v / max(seen, 1) for k, v in sums.items()},
               **{f"val_{k}": v for k, v in val.items()}}
        rows.append(row)
        last_good = {k: v.copy() for k, v in network.state_arrays().items()}
        if progress is not None:
            progress(row)
        log.info("epoch %d train %.4f val %.4f", epoch, row["train_total"], row.get("val_total", float("nan")))

    if config.bn_recalibrate:
        # the last epoch's augmented table matches the distribution the batch statistics saw
        network.recalibrate_batchnorm(_epoch_table(tr, config, rig, config.epochs).features)
        if len(va):
            rows[-1].update({f"val_{k}": v for k, v in evaluate_table(network, va, config).items()})
    if out_dir is not None:
        save_checkpoint(out_dir / "model.ckpt", network, meta, optimizer=opt)
        _write_log(out_dir / "train_log.csv", rows)
    return TrainResult(network, rows, meta)


def _write_log(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{row[k]:.10g}" if isinstance(row.get(k), float) else row.get(k, ""))
                             for k in LOG_COLUMNS})


def train_from_files(train_path, val_path, rig, config=TrainConfig(), out_dir=None, progress=None):
    return train(read_pairs(train_path), read_pairs(val_path), rig, config, out_dir, progress)


def load_model(path):
    """Network and metadata from a checkpoint written by :func:`train`."""
    network, payload = load_checkpoint(path)
    return network, payload.get("meta", {})


def check_gradients(seed=0, batch=8, hidden=32, max_per_param=None, input_dim=68):
    """Finite-difference check of the full network plus the composed loss.

    Uses the production architecture (residual blocks, batch norm, dropout
    in train mode) at width ``hidden`` with random inputs, targets and
    labels drawn from ``seed``. The output layer gets unit init scale so
    every gradient entry is far from zero.
    """
    from .nn import gradcheck

    rng = substream(seed, "gradcheck")
    net = Network(NetworkSpec(input_dim=input_dim, hidden=hidden, seed=seed, output_init_scale=1.0))
    x = rng.normal(0.0, 0.3, (batch, input_dim))
    gt = np.column_stack([rng.uniform(5, 50, batch), rng.uniform(-0.5, 0.5, batch), rng.uniform(-0.2, 0.2, batch)])
    labels = (rng.random(batch) < 0.5).astype(float)

    def objective(raw):
        total, grad, _, kinks = composed_loss(raw, gt, labels)
        return total, grad, kinks

    return gradcheck(net, x, objective, dropout_seed=seed, max_per_param=max_per_param, sample_seed=seed)
