"""Training loops, the FLOPs cost model, and multigrid-style schedules.

Cost model: a graph convolution layer with n-by-n structure matrix Z (nnz
stored entries), n-by-F input, and F-by-C filter costs ``n*F*(nnz + C)``; a
node-wise dense layer costs ``n*F*C``; a projection between an n-by-k and a
k-by-m operand costs ``n*m*k``. A backward pass is charged at twice the
forward cost. Validation passes are not charged.

Schedules:

* ``joint``: every step updates every level (and the prolongations when the
  model is adaptive).
* ``gamma_cycle``: recursive smoothing. A cycle at level l smooths level l,
  recurses gamma times into level l+1, then smooths level l again; gamma=0
  degenerates to fine-level smoothing only. Smoothing runs the full ensemble
  forward with gradients masked to the level that owns them (a config switch
  selects partial-ensemble forwards instead).
* ``coarse_to_fine``: stage s trains the s coarsest levels as a partial
  ensemble; a stage advances after ``patience`` epochs without validation
  improvement, and the last stage trains everything.

Validation error is always measured at the fine scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .ensembles import ModelSpec, init_model_params, model_forward, model_graph
from .numcore import AdamState, adam_step, seeded_rng
from .serialize import write_csv
from .simulator import Dataset

__all__ = [
    "nmse",
    "flops_gcn_layer",
    "flops_dense",
    "flops_project",
    "FlopsLedger",
    "member_flops",
    "model_forward_flops",
    "NormStats",
    "split_indices",
    "normalize_dataset",
    "ScheduleSpec",
    "EvalPoint",
    "RunRecord",
    "Trainer",
    "train",
    "gamma_cycle",
    "coarse_to_fine",
    "gamma_sequence",
    "best_val_at_budget",
]


def nmse(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error over all entries of two equally shaped signals
    (unitless once both are z-scored)."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


# ---------------------------------------------------------------------------
# FLOPs cost model


def flops_gcn_layer(n: int, f: int, c: int, nnz: int) -> int:
    if min(n, f, c, nnz) < 1:
        raise ValueError("flops arguments must be positive")
    return n * f * (nnz + c)


def flops_dense(n: int, f: int, c: int) -> int:
    if min(n, f, c) < 1:
        raise ValueError("flops arguments must be positive")
    return n * f * c


def flops_project(n: int, m: int, k: int) -> int:
    if min(n, m, k) < 1:
        raise ValueError("flops arguments must be positive")
    return n * m * k


class FlopsLedger:
    """Monotone cumulative operation-cost counter with a per-category split."""

    def __init__(self):
        self.total = 0
        self.by_category = {}

    def add(self, category: str, count: int) -> None:
        if count < 0:
            raise ValueError("ledger counts must be nonnegative")
        self.total += int(count)
        self.by_category[category] = self.by_category.get(category, 0) + int(count)


def member_flops(level, in_features: int, nnz: int | None = None):
    """Per-frame forward cost of one member, split into gcn/dense parts."""
    n = level.n
    z_nnz = nnz if nnz is not None else level.z.nnz
    gcn_cost = 0
    f = in_features
    for c in level.gcn_widths:
        gcn_cost += flops_gcn_layer(n, f, c, z_nnz)
        f = c
    dense_cost = 0
    f = level.concat_width
    for c in level.dense_widths:
        dense_cost += flops_dense(n, f, c)
        f = c
    return gcn_cost, dense_cost


def model_forward_flops(
    spec: ModelSpec, in_features: int, level_mask=None, batch: int = 1
):
    """Predicted forward cost of a batch, per the cost model above.

    Returns (total, breakdown dict). For adaptive models the prolongation
    composition is recomputed each pass and charged once per pass; frozen
    compositions are precomputable and free. Differentiable pooling charges
    its pooling convolutions, the coarsening products, and dense coarse
    structure matrices (nnz = n^2).
    """
    active = set(range(spec.n_levels)) if level_mask is None else set(level_mask)
    gcn_cost = dense_cost = project_cost = 0  # per frame
    compose_cost = 0  # per pass, independent of the batch size
    n0 = spec.n_fine
    if spec.kind in ("plain_ensemble", "ngcn"):
        for i, lvl in enumerate(spec.levels):
            if i not in active:
                continue
            g, d = member_flops(lvl, in_features)
            gcn_cost += g
            dense_cost += d
    elif spec.kind == "gpcn":
        maxa = max(active)
        for i, lvl in enumerate(spec.levels):
            if spec.adaptive and 2 <= i <= maxa:
                # composing P(fine->i) from P(fine->i-1), once per pass
                compose_cost += flops_project(n0, lvl.n, spec.levels[i - 1].n)
            if i not in active:
                continue
            g, d = member_flops(lvl, in_features)
            gcn_cost += g
            dense_cost += d
            if i > 0:
                project_cost += flops_project(lvl.n, in_features, n0)  # restrict input
                project_cost += flops_project(n0, 1, lvl.n)  # lift output
    elif spec.kind == "diffpool":
        maxa = max(active)
        n_prev = n0
        nnz_prev = spec.levels[0].z.nnz
        for i, lvl in enumerate(spec.levels):
            if i > 0 and i <= maxa:
                n_i = lvl.n
                # pooling convolution, then S^T X and S^T (Z S)
                gcn_cost += flops_gcn_layer(n_prev, in_features, n_i, nnz_prev)
                project_cost += flops_project(n_i, in_features, n_prev)
                project_cost += flops_project(n_prev, n_i, n_prev)
                project_cost += flops_project(n_i, n_i, n_prev)
                if i >= 2:
                    project_cost += flops_project(n0, n_i, n_prev)  # extend the lift
                n_prev, nnz_prev = n_i, n_i * n_i
            if i not in active:
                continue
            g, d = member_flops(lvl, in_features, nnz=lvl.z.nnz if lvl.z is not None else lvl.n**2)
            gcn_cost += g
            dense_cost += d
            if i > 0:
                project_cost += flops_project(n0, 1, lvl.n)
    breakdown = {
        "gcn_layer": batch * gcn_cost,
        "dense": batch * dense_cost,
        "projection": batch * project_cost + compose_cost,
    }
    return sum(breakdown.values()), breakdown


# ---------------------------------------------------------------------------
# normalization and splits


@dataclass
class NormStats:
    """Per-node, per-feature z-score statistics from the training split only."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray


def split_indices(n_frames: int, seed, ratio: float = 0.8):
    """Deterministic train/validation split; depends only on (seed, size)."""
    rng = seeded_rng(np.random.SeedSequence((int(seed), int(n_frames))))
    perm = rng.permutation(n_frames)
    n_train = max(1, int(ratio * n_frames))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def _guarded_std(a: np.ndarray, axis) -> np.ndarray:
    std = a.std(axis=axis)
    return np.where(std < 1e-12, 1.0, std)


def normalize_dataset(data: Dataset, train_idx: np.ndarray):
    """Z-score inputs and targets along the frame axis using training frames
    only; returns (stats, x_normalized, y_normalized)."""
    stats = NormStats(
        x_mean=data.x[train_idx].mean(axis=0),
        x_std=_guarded_std(data.x[train_idx], 0),
        y_mean=data.y[train_idx].mean(axis=0),
        y_std=_guarded_std(data.y[train_idx], 0),
    )
    xn = (data.x - stats.x_mean) / stats.x_std
    yn = (data.y - stats.y_mean) / stats.y_std
    data.normalization = stats
    return stats, xn, yn


# ---------------------------------------------------------------------------
# schedules


@dataclass
class ScheduleSpec:
    kind: str = "joint"  # joint | gamma_cycle | coarse_to_fine
    gamma: int = 1
    smoothing_epochs: int = 1
    patience: int = 10
    total_epochs: int = 1000
    batches_per_epoch: int = 20
    batch_size: int = 8
    smoothing_forward: str = "full"  # or "partial": coarser-levels-only output

    def __post_init__(self):
        if self.kind not in ("joint", "gamma_cycle", "coarse_to_fine"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not (0 <= self.gamma <= 3):
            raise ValueError("gamma must be in {0,1,2,3}")
        if self.smoothing_epochs < 1 or self.batches_per_epoch < 1 or self.batch_size < 1:
            raise ValueError("schedule counts must be positive")
        if self.total_epochs < 0:
            raise ValueError("total_epochs must be nonnegative")
        if self.smoothing_forward not in ("full", "partial"):
            raise ValueError("smoothing_forward must be 'full' or 'partial'")


def gamma_sequence(n_levels: int, gamma: int):
    """Level-visit order of one cycle, fine level first (0 = fine)."""
    if n_levels < 2:
        raise ValueError("cycles need at least two levels")

    def cycle(level):
        if level == n_levels - 1:
            return [level]
        inner = []
        for _ in range(gamma):
            inner.extend(cycle(level + 1))
        return [level, *inner, level]

    return cycle(0)


@dataclass
class EvalPoint:
    flops: int
    epoch: int
    train_nmse: float
    best_val_nmse: float


@dataclass
class RunRecord:
    """Per-epoch evaluation trace of one training run."""

    model_name: str
    seed: int
    points: list = field(default_factory=list)
    epoch_log: list = field(default_factory=list)  # (epoch, label) rows
    stage_starts: list = field(default_factory=list)  # (stage, epoch) rows
    diverged: bool = False

    @property
    def best_val_nmse(self) -> float:
        return min(p.best_val_nmse for p in self.points)

    @property
    def total_flops(self) -> int:
        return self.points[-1].flops if self.points else 0

    def to_csv(self, path) -> None:
        write_csv(
            path,
            ["flops", "epoch", "train_nmse", "best_val_nmse"],
            [(p.flops, p.epoch, p.train_nmse, p.best_val_nmse) for p in self.points],
        )


def best_val_at_budget(record: RunRecord, budget: int) -> float:
    """Best validation NMSE among evaluations within a FLOPs budget."""
    vals = [p.best_val_nmse for p in record.points if p.flops <= budget]
    if not vals:
        raise ValueError("no evaluation points inside the budget")
    return min(vals)


class Trainer:
    """Owns parameters, optimizer state, data split, and the ledger for one run."""

    def __init__(self, spec: ModelSpec, data: Dataset, schedule: ScheduleSpec, seed):
        self.spec = spec
        self.schedule = schedule
        self.seed = seed
        train_idx, val_idx = split_indices(data.n_frames, seed)
        if len(val_idx) == 0:
            raise ValueError("dataset too small for a validation split")
        _, xn, yn = normalize_dataset(data, train_idx)
        self.x_train, self.y_train = xn[train_idx], yn[train_idx]
        self.x_val, self.y_val = xn[val_idx], yn[val_idx]
        self.in_features = xn.shape[-1]
        self.rng = seeded_rng(seed)
        self.params = init_model_params(spec, self.in_features, self.rng)
        self.adam = {
            owner: AdamState.for_params([arr for _, arr in self.params.owned_arrays(owner)])
            for owner in range(spec.n_levels)
        }
        self.ledger = FlopsLedger()
        self.record = RunRecord(model_name=spec.name or spec.kind, seed=int(seed))
        self._best_val = np.inf

    # -- single pieces ------------------------------------------------------

    def _charge(self, level_mask, n_frames: int) -> None:
        _, breakdown = model_forward_flops(
            self.spec, self.in_features, level_mask=level_mask, batch=n_frames
        )
        for category, cost in breakdown.items():
            self.ledger.add(category, 3 * cost)  # forward plus backward at 2x

    def _train_epoch(self, update_levels=None, forward_mask=None) -> float:
        """One epoch of batched ADAM steps; returns the mean batch loss."""
        update = (
            set(range(self.spec.n_levels)) if update_levels is None else set(update_levels)
        )
        losses = []
        for _ in range(self.schedule.batches_per_epoch):
            idx = self.rng.choice(
                len(self.x_train),
                size=min(self.schedule.batch_size, len(self.x_train)),
                replace=False,
            )
            tape = Tape()
            out, bindings = model_graph(
                tape, self.spec, self.params, self.x_train[idx],
                level_mask=forward_mask, train=True,
            )
            loss = tape.mse(out, self.y_train[idx])
            losses.append(float(loss.value))
            if not np.isfinite(loss.value):
                self.record.diverged = True
                return float(loss.value)
            tape.backward(loss)
            grads = {name: node.grad for _, name, _, node in bindings}
            for owner in sorted(update):
                named = self.params.owned_arrays(owner)
                arrays = [arr for _, arr in named]
                grad_list = [
                    grads.get(name) if grads.get(name) is not None else np.zeros_like(arr)
                    for name, arr in named
                ]
                adam_step(self.adam[owner], arrays, grad_list)
            self._charge(forward_mask, len(idx))
        return float(np.mean(losses))

    def _validate(self, forward_mask=None) -> float:
        pred = model_forward(self.spec, self.params, self.x_val, level_mask=forward_mask)
        return nmse(pred, self.y_val)

    def _evaluate(self, epoch: int, train_nmse: float, forward_mask=None) -> float:
        val = self._validate(forward_mask)
        self._best_val = min(self._best_val, val)
        self.record.points.append(
            EvalPoint(
                flops=self.ledger.total,
                epoch=epoch,
                train_nmse=train_nmse,
                best_val_nmse=self._best_val,
            )
        )
        return val

    def _initial_train_nmse(self) -> float:
        pred = model_forward(self.spec, self.params, self.x_train)
        return nmse(pred, self.y_train)

    # -- schedules -----------------------------------------------------------

    def run(self) -> RunRecord:
        kind = self.schedule.kind
        if kind == "joint":
            return self._run_joint()
        if kind == "gamma_cycle":
            return self._run_gamma()
        return self._run_coarse_to_fine()

    def _run_joint(self) -> RunRecord:
        self._evaluate(0, self._initial_train_nmse())
        for epoch in range(1, self.schedule.total_epochs + 1):
            tn = self._train_epoch()
            self.record.epoch_log.append((epoch, "joint"))
            self._evaluate(epoch, tn)
            if self.record.diverged:
                break
        return self.record

    def _run_gamma(self) -> RunRecord:
        if self.spec.n_levels < 2:
            raise ValueError("gamma cycles need a multiscale model")
        seq = gamma_sequence(self.spec.n_levels, self.schedule.gamma)
        self._evaluate(0, self._initial_train_nmse())
        epoch = 0
        while epoch < self.schedule.total_epochs and not self.record.diverged:
            for level in seq:
                for _ in range(self.schedule.smoothing_epochs):
                    if epoch >= self.schedule.total_epochs or self.record.diverged:
                        break
                    epoch += 1
                    mask = (
                        None
                        if self.schedule.smoothing_forward == "full"
                        else set(range(level, self.spec.n_levels))
                    )
                    tn = self._train_epoch(update_levels={level}, forward_mask=mask)
                    self.record.epoch_log.append((epoch, f"level{level}"))
                    self._evaluate(epoch, tn)
        return self.record

    def _run_coarse_to_fine(self) -> RunRecord:
        # with a single level, stage 1 is already every level: plain joint training
        k = self.spec.n_levels
        stage = 1
        active = set(range(k - stage, k))
        self.record.stage_starts.append((stage, 0))
        self._evaluate(0, self._initial_train_nmse(), forward_mask=active)
        best_in_stage = self._best_val
        since_improve = 0
        for epoch in range(1, self.schedule.total_epochs + 1):
            tn = self._train_epoch(update_levels=active, forward_mask=active)
            self.record.epoch_log.append((epoch, f"stage{stage}"))
            val = self._evaluate(epoch, tn, forward_mask=active)
            if self.record.diverged:
                break
            if val < best_in_stage - 1e-15:
                best_in_stage = val
                since_improve = 0
            else:
                since_improve += 1
            if since_improve >= self.schedule.patience and stage < k:
                stage += 1
                active = set(range(k - stage, k))
                self.record.stage_starts.append((stage, epoch))
                best_in_stage = np.inf
                since_improve = 0
        return self.record


def train(spec: ModelSpec, data: Dataset, schedule: ScheduleSpec, seed) -> RunRecord:
    """Run one training schedule to completion; deterministic given the seed."""
    return Trainer(spec, data, schedule, seed).run()


def gamma_cycle(
    spec: ModelSpec, data: Dataset, gamma: int, smoothing_epochs: int = 1, seed=0, **kwargs
) -> RunRecord:
    schedule = ScheduleSpec(
        kind="gamma_cycle", gamma=gamma, smoothing_epochs=smoothing_epochs, **kwargs
    )
    return train(spec, data, schedule, seed)


def coarse_to_fine(spec: ModelSpec, data: Dataset, seed=0, **kwargs) -> RunRecord:
    return train(spec, data, ScheduleSpec(kind="coarse_to_fine", **kwargs), seed)
