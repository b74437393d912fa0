"""Synthetic multi-hospital binary classification data.

Each client draws latent features from two unit-variance class-conditional
Gaussians with means ``center +/- separation/2 * u``, where ``u`` is a shared
unit direction and ``center`` is a per-client offset of scale
``client_shift``. That gives every client its own covariate shift on top of
its own label mix. Observed features are the latents times
``feature_scale``, standing in for unnormalized embedding outputs; the scale
sets how large trained weights are and hence how much a fixed amount of
additive weight noise hurts. Datasets are split 80/20 into train and test,
stratified by class.

CSV layout (``export_csv`` / ``import_csv``): a header row, then one row per
example with columns ``client_id, split, label, x0 .. x{d-1}``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, UsageError

# Slide counts per hospital in the lung cohort, used as relative client sizes.
TABLE1_SLIDES = (267, 211, 207, 199, 223, 110)
DEFAULT_LABEL_FRACS = (0.62, 0.48, 0.55, 0.66, 0.70, 0.40)
TRAIN_FRACTION = 0.8


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class DataConfig:
    K: int = 6
    sizes: tuple[int, ...] = TABLE1_SLIDES
    label_fracs: tuple[float, ...] = DEFAULT_LABEL_FRACS
    input_dim: int = 64
    separation: float = 1.6
    feature_scale: float = 16.0
    client_shift: float = 0.3
    seed: int = 7

    def __post_init__(self) -> None:
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(
            self, "label_fracs", tuple(float(f) for f in self.label_fracs)
        )

    def validate(self) -> None:
        if self.K < 1:
            raise ConfigError("data.K", "must be >= 1")
        if len(self.sizes) != self.K:
            raise ConfigError("data.sizes", f"needs {self.K} entries")
        if len(self.label_fracs) != self.K:
            raise ConfigError("data.label_fracs", f"needs {self.K} entries")
        if any(s < 10 for s in self.sizes):
            raise ConfigError("data.sizes", "every client needs >= 10 examples")
        if any(not 0.0 <= f <= 1.0 for f in self.label_fracs):
            raise ConfigError("data.label_fracs", "fractions must lie in [0, 1]")
        if self.input_dim < 1:
            raise ConfigError("data.input_dim", "must be >= 1")
        if self.feature_scale <= 0:
            raise ConfigError("data.feature_scale", "must be positive")
        if self.separation < 0 or self.client_shift < 0:
            raise ConfigError("data.separation", "scales must be non-negative")


def default_data_config(K: int = 6, seed: int = 7, **overrides) -> DataConfig:
    """Six-hospital profile with Table-1 proportions; cycles them for other K."""
    sizes = tuple(TABLE1_SLIDES[i % len(TABLE1_SLIDES)] for i in range(K))
    fracs = tuple(DEFAULT_LABEL_FRACS[i % len(DEFAULT_LABEL_FRACS)] for i in range(K))
    return DataConfig(K=K, sizes=sizes, label_fracs=fracs, seed=seed, **overrides)


@dataclass
class ClientDataset:
    client_id: int
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    label_frac: float = field(default=float("nan"))

    @property
    def n_train(self) -> int:
        return len(self.y_train)

    @property
    def n_test(self) -> int:
        return len(self.y_test)


def _stratified_train_counts(n: int, n_pos: int) -> tuple[int, int]:
    n_train = round_half_up(TRAIN_FRACTION * n)
    n_neg = n - n_pos
    pos_train = round_half_up(n_train * n_pos / n)
    # Keep each present class represented in train and the totals consistent.
    lo = max(1 if n_pos else 0, n_train - n_neg)
    hi = min(n_pos, n_train - (1 if n_neg else 0))
    pos_train = min(max(pos_train, lo), hi)
    return pos_train, n_train - pos_train


def generate_clients(cfg: DataConfig) -> list[ClientDataset]:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    d = cfg.input_dim
    direction = rng.normal(size=d)
    direction /= np.linalg.norm(direction)

    clients = []
    for k in range(cfg.K):
        n = cfg.sizes[k]
        n_pos = round_half_up(n * cfg.label_fracs[k])
        center = rng.normal(0.0, cfg.client_shift, size=d)
        half = 0.5 * cfg.separation * direction
        X_pos = cfg.feature_scale * (center + half + rng.normal(size=(n_pos, d)))
        X_neg = cfg.feature_scale * (center - half + rng.normal(size=(n - n_pos, d)))

        pos_train, neg_train = _stratified_train_counts(n, n_pos)
        pos_perm = rng.permutation(n_pos)
        neg_perm = rng.permutation(n - n_pos)
        X_tr = np.vstack([X_pos[pos_perm[:pos_train]], X_neg[neg_perm[:neg_train]]])
        y_tr = np.concatenate([np.ones(pos_train), np.zeros(neg_train)])
        X_te = np.vstack([X_pos[pos_perm[pos_train:]], X_neg[neg_perm[neg_train:]]])
        y_te = np.concatenate(
            [np.ones(n_pos - pos_train), np.zeros(n - n_pos - neg_train)]
        )
        tr = rng.permutation(len(y_tr))
        te = rng.permutation(len(y_te))
        clients.append(
            ClientDataset(
                client_id=k + 1,
                X_train=X_tr[tr],
                y_train=y_tr[tr].astype(np.int64),
                X_test=X_te[te],
                y_test=y_te[te].astype(np.int64),
                label_frac=cfg.label_fracs[k],
            )
        )
    return clients


def export_csv(clients: list[ClientDataset], path: str | Path) -> None:
    d = clients[0].X_train.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["client_id", "split", "label", *[f"x{i}" for i in range(d)]])
        for c in clients:
            for split, X, y in (("train", c.X_train, c.y_train), ("test", c.X_test, c.y_test)):
                for row, label in zip(X, y):
                    writer.writerow([c.client_id, split, int(label), *map(repr, row.tolist())])


def import_csv(path: str | Path) -> list[ClientDataset]:
    rows: dict[int, dict[str, tuple[list, list]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["client_id", "split", "label"]:
            raise UsageError(f"unexpected CSV header {header[:3]}")
        for line in reader:
            cid, split, label = int(line[0]), line[1], int(line[2])
            if split not in ("train", "test"):
                raise UsageError(f"unknown split {split!r}")
            bucket = rows.setdefault(cid, {"train": ([], []), "test": ([], [])})
            bucket[split][0].append([float(v) for v in line[3:]])
            bucket[split][1].append(label)
    out = []
    d = len(header) - 3
    for cid in sorted(rows):
        b = rows[cid]

        def arr(xs):
            return np.array(xs, dtype=np.float64).reshape(-1, d)

        out.append(
            ClientDataset(
                client_id=cid,
                X_train=arr(b["train"][0]),
                y_train=np.array(b["train"][1], dtype=np.int64),
                X_test=arr(b["test"][0]),
                y_test=np.array(b["test"][1], dtype=np.int64),
            )
        )
    return out
