"""Mini-batch SGD training loop for the margin objectives.

One loop serves every objective; they differ only in which margin vector,
compactness weight, and spread target feed the loss:

    ce               unit margins, no compactness term
    uniform_gamma    flat margins at the budget, no compactness term
    gamma_only       spread-proportional margins, no compactness term
    rep_zero_margin  unit margins, compactness with a zero spread target
    rep_only         unit margins, compactness against the running spread
    mr2              spread-proportional margins plus compactness
    delta_margin(k)  fixed prior-driven pairwise offsets (k names the rule)

Class statistics are tracked for every objective (the logs want spread
trajectories even for plain cross-entropy); whether the loss consumes them
is the objective's business.  Batches are class-stratified: each epoch
splits every class's shuffled samples across the steps, so a batch holds
several samples of most classes and no sample is dropped.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .datagen import Dataset
from .losses import delta_margin_ce_batch, logit_margin_ce_batch, rep_margin_loss_batch
from .margins import DELTA_KINDS, delta_margins, gamma_from_stats
from .metrics import EvalReport, evaluate_model
from .model import ACTIVATIONS, ENCODERS, HEADS, MarginModel
from .stats import ClassStats

OBJECTIVES = (
    "ce",
    "uniform_gamma",
    "gamma_only",
    "rep_zero_margin",
    "rep_only",
    "mr2",
)
ABLATION_ARMS = OBJECTIVES

_DELTA_RE = re.compile(r"^delta_margin\((\w+)\)$")


@dataclass
class TrainConfig:
    objective: str = "mr2"
    c_bar: float = 2.0
    lam: float = 0.5
    ema_decay: float = 0.9
    epochs: int = 30
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_schedule: str = "cosine"
    seed: int = 0
    p: float = 2.0
    stats_update_order: str = "before_loss"
    tau: float = 1.0
    encoder: str = "mlp"
    hidden_dim: int = 64
    feature_dim: int = 32
    head: str = "linear"
    activation: str = "tanh"

    def __post_init__(self):
        self.delta_kind = None
        m = _DELTA_RE.match(self.objective)
        if m:
            if m.group(1) not in DELTA_KINDS:
                raise ValueError(f"unknown delta margin kind {m.group(1)!r}")
            self.delta_kind = m.group(1)
        elif self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.c_bar <= 0:
            raise ValueError("c_bar must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if not (0.0 <= self.ema_decay < 1.0):
            raise ValueError("ema_decay must lie in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be non-negative")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must lie in [0, 1)")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.stats_update_order not in ("before_loss", "after_loss"):
            raise ValueError(
                f"unknown stats_update_order {self.stats_update_order!r}"
            )
        if not (self.p >= 1.0):
            raise ValueError("p must be >= 1")
        if self.encoder not in ENCODERS:
            raise ValueError(f"unknown encoder {self.encoder!r}")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


# Config files are flat key = value lines; the loss weight keeps its
# mathematical name there.
_KEY_ALIASES = {"lambda": "lam"}
_FIELD_TO_KEY = {"lam": "lambda"}


def parse_config(text: str) -> TrainConfig:
    values: dict[str, object] = {}
    types = {f.name: f.type for f in fields(TrainConfig)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, val = (part.strip() for part in line.split("=", 1))
        key = _KEY_ALIASES.get(key, key)
        if key not in types:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        if key in values:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        kind = types[key]
        try:
            if kind == "int":
                values[key] = int(val)
            elif kind == "float":
                values[key] = float(val)
            else:
                values[key] = val
        except ValueError as exc:
            raise ValueError(f"config line {lineno}: bad value for {key}") from exc
    return TrainConfig(**values)


def config_to_text(config: TrainConfig) -> str:
    lines = []
    for f in fields(TrainConfig):
        key = _FIELD_TO_KEY.get(f.name, f.name)
        lines.append(f"{key} = {getattr(config, f.name)}")
    return "\n".join(lines) + "\n"


@dataclass
class TrainLog:
    num_classes: int
    epochs: list = field(default_factory=list)

    def append(self, epoch, lr, total, ce_term, rep_term, test_acc, gamma, s_norms):
        self.epochs.append(
            {
                "epoch": epoch,
                "lr": lr,
                "total_loss": total,
                "ce_term": ce_term,
                "rep_term": rep_term,
                "test_acc": test_acc,
                "gamma": np.asarray(gamma).copy(),
                "s_norms": np.asarray(s_norms).copy(),
            }
        )

    def to_csv_text(self) -> str:
        k = self.num_classes
        cols = ["epoch", "lr", "total_loss", "ce_term", "rep_term", "test_acc"]
        cols += [f"gamma_{i}" for i in range(k)]
        cols += [f"s_norm_{i}" for i in range(k)]
        lines = [",".join(cols)]
        for row in self.epochs:
            cells = [
                repr(row["epoch"]),
                repr(row["lr"]),
                repr(row["total_loss"]),
                repr(row["ce_term"]),
                repr(row["rep_term"]),
                repr(row["test_acc"]),
            ]
            cells += [repr(v) for v in row["gamma"]]
            cells += [repr(v) for v in row["s_norms"]]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


@dataclass
class TrainResult:
    model: MarginModel
    stats: ClassStats
    log: TrainLog
    report: EvalReport


def _stratified_batches(labels, num_classes, batch_size, rng):
    """Index arrays for one epoch of class-stratified batches."""
    n = labels.shape[0]
    steps = max(1, n // batch_size)
    buckets = [[] for _ in range(steps)]
    for k in range(num_classes):
        idx = np.flatnonzero(labels == k)
        if idx.size == 0:
            continue
        idx = rng.permutation(idx)
        quota = idx.size // steps
        extra = idx.size - quota * steps
        pos = 0
        for s in range(steps):
            take = quota + (1 if s < extra else 0)
            if take:
                buckets[s].append(idx[pos : pos + take])
            pos += take
    return [np.concatenate(b) for b in buckets if b]


def _objective_knobs(config, stats, priors):
    """Resolve (gamma, s_bar, lam_eff, delta) for the current step."""
    k = stats.num_classes
    if config.delta_kind is not None:
        return None, 0.0, 0.0, delta_margins(priors, config.delta_kind, config.tau)
    obj = config.objective
    if obj == "ce":
        return np.ones(k), 0.0, 0.0, None
    if obj == "uniform_gamma":
        return np.full(k, config.c_bar), 0.0, 0.0, None
    if obj == "gamma_only":
        return gamma_from_stats(stats, config.c_bar, use_lp=config.p != 2.0), 0.0, 0.0, None
    if obj == "rep_zero_margin":
        return np.ones(k), 0.0, config.lam, None
    if obj == "rep_only":
        return np.ones(k), stats.spread_target(), config.lam, None
    # mr2
    return (
        gamma_from_stats(stats, config.c_bar, use_lp=config.p != 2.0),
        stats.spread_target(),
        config.lam,
        None,
    )


def _epoch_lr(config, epoch: int) -> float:
    if config.lr_schedule == "constant":
        return config.lr
    return config.lr * 0.5 * (1.0 + np.cos(np.pi * epoch / config.epochs))


def train(config: TrainConfig, train_set: Dataset, test_set: Dataset) -> TrainResult:
    """Run the configured objective over the train set; returns the model,
    final statistics, the per-epoch log, and an evaluation on the test set.

    Bit-deterministic for a fixed config: same seeds, same batch order,
    same float64 operations, single thread.
    """
    if train_set.num_classes != test_set.num_classes:
        raise ValueError("train and test class counts differ")
    k = train_set.num_classes
    if k < 2:
        raise ValueError("training needs at least two classes")
    model = MarginModel(
        d_in=train_set.d_in,
        num_classes=k,
        encoder=config.encoder,
        hidden_dim=config.hidden_dim,
        feature_dim=config.feature_dim,
        head=config.head,
        activation=config.activation,
        seed=[config.seed, 11],
    )
    stats = ClassStats(
        num_classes=k, dim=model.feature_dim, p=config.p, decay=config.ema_decay
    )
    sampler = np.random.default_rng([config.seed, 13])
    counts = train_set.class_counts()
    priors = counts / counts.sum()
    if config.delta_kind is not None and np.any(counts == 0):
        raise ValueError("delta margin objectives need every class present")
    velocity = {name: np.zeros_like(p) for name, p in model.params.items()}
    skip_decay = set()
    if config.head == "cosine":
        skip_decay = {n for n in model.params if n.startswith("head_")}
    log = TrainLog(num_classes=k)
    gamma_used = np.ones(k)
    for epoch in range(config.epochs):
        lr = _epoch_lr(config, epoch)
        sums = np.zeros(3)
        steps = 0
        for idx in _stratified_batches(train_set.y, k, config.batch_size, sampler):
            xb, yb = train_set.x[idx], train_set.y[idx]
            b = idx.shape[0]
            feats, logits, cache = model.forward(xb)
            if config.stats_update_order == "before_loss":
                stats.update(feats, yb)
            gamma, s_bar, lam_eff, delta = _objective_knobs(config, stats, priors)
            if delta is not None:
                ce_vals, grad_logits = delta_margin_ce_batch(logits, yb, delta)
                rep_vals = np.zeros(b)
                grad_feat = None
            else:
                gamma_used = gamma
                ce_vals, grad_logits = logit_margin_ce_batch(logits, yb, gamma)
                if lam_eff > 0.0:
                    rep_vals, gfeat = rep_margin_loss_batch(feats, yb, s_bar)
                    grad_feat = lam_eff * gfeat / b
                else:
                    rep_vals = np.zeros(b)
                    grad_feat = None
            grads = model.backward(cache, grad_logits / b, grad_feat)
            if config.stats_update_order == "after_loss":
                stats.update(feats, yb)
            ce_term = float(ce_vals.mean())
            rep_term = float(rep_vals.mean())
            lam_w = lam_eff if delta is None else 0.0
            sums += (ce_term + lam_w * rep_term, ce_term, rep_term)
            steps += 1
            for name, p in model.params.items():
                g = grads[name]
                if config.weight_decay and name not in skip_decay:
                    g = g + config.weight_decay * p
                velocity[name] = config.momentum * velocity[name] + g
                p -= lr * velocity[name]
        test_logits = model.predict_logits(test_set.x)
        test_acc = float(np.mean(test_logits.argmax(axis=1) == test_set.y))
        log.append(
            epoch,
            lr,
            sums[0] / steps,
            sums[1] / steps,
            sums[2] / steps,
            test_acc,
            gamma_used,
            np.sqrt(stats.s_sq),
        )
    return TrainResult(
        model=model, stats=stats, log=log, report=evaluate_model(model, test_set)
    )


def ablation_suite(
    base_config: TrainConfig,
    train_set: Dataset,
    test_set: Dataset,
    seeds,
    arms=ABLATION_ARMS,
    threads: int = 1,
) -> dict[str, list[TrainResult]]:
    """Train every arm at every seed; returns arm -> per-seed results."""
    jobs = [
        (arm, seed, replace(base_config, objective=arm, seed=seed))
        for arm in arms
        for seed in seeds
    ]

    def run(job):
        _, _, cfg = job
        return train(cfg, train_set, test_set)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]
    out: dict[str, list[TrainResult]] = {arm: [] for arm in arms}
    for (arm, _, _), res in zip(jobs, results):
        out[arm].append(res)
    return out


def ablation_csv_text(table: dict[str, list[TrainResult]]) -> str:
    lines = [
        "arm,seed_index,overall_acc,easy_acc,medium_acc,hard_acc,m_o,m_c_degrees,variability"
    ]
    for arm, results in table.items():
        for i, res in enumerate(results):
            r = res.report
            lines.append(
                ",".join(
                    [arm, str(i)]
                    + [
                        repr(v)
                        for v in (
                            r.overall_acc,
                            r.easy_acc,
                            r.medium_acc,
                            r.hard_acc,
                            r.m_o,
                            r.m_c_degrees,
                            r.variability,
                        )
                    ]
                )
            )
        if results:
            means = [
                float(np.mean([getattr(res.report, f) for res in results]))
                for f in (
                    "overall_acc",
                    "easy_acc",
                    "medium_acc",
                    "hard_acc",
                    "m_o",
                    "m_c_degrees",
                    "variability",
                )
            ]
            lines.append(",".join([arm, "mean"] + [repr(v) for v in means]))
    return "\n".join(lines) + "\n"
