"""Training loop, Adam with step decay, metrics, and the benchmark grid.

Training is full batch: one Adam step per iteration on the mean gradient
over all training sequences, 150 iterations by default, snapshotting the
parameters with the best validation macro-F1.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from socialseq.dataset import SocialSequence
from socialseq.features import AugmentConfig, augment
from socialseq.model import (
    Arch,
    ModelParams,
    backward,
    class_weights,
    forward,
    init_params,
    joint_loss,
    l2_penalty,
)
from socialseq.numerics import Rng
from socialseq.taxonomy import N_DOMAINS, N_RELATIONS, infer_domain_distribution

EVAL_MODES = ("relation-direct", "domain-direct", "domain-inferred")


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, history: list["HistoryRecord"]):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class TrainConfig:
    arch: Arch = Arch.ST_REL
    hidden: int = 128
    alpha0: float = 2e-3
    dropout: float = 0.3
    l2: float = 1e-3
    iterations: int = 150
    decay_period: int = 50
    decay_factor: float = 0.5
    seed: int = 0
    augment_multiplier: int = 0
    augment_sigma: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "arch", Arch(self.arch))
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        for name in ("hidden", "alpha0", "decay_period", "decay_factor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.l2 < 0 or self.augment_sigma < 0 or self.augment_multiplier < 0:
            raise ValueError("l2, augment_sigma and augment_multiplier must be >= 0")

    def to_json(self) -> dict:
        out = asdict(self)
        out["arch"] = self.arch.value
        return out


def lr_schedule(iteration: int, cfg: TrainConfig) -> float:
    """alpha0 scaled by decay_factor every decay_period iterations."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return cfg.alpha0 * cfg.decay_factor ** (iteration // cfg.decay_period)


def _named_arrays(params):
    if hasattr(params, "named_arrays"):
        return list(params.named_arrays())
    return list(params.items())


@dataclass(eq=False)
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params) -> "AdamState":
        named = _named_arrays(params)
        return cls(
            m={name: np.zeros_like(arr) for name, arr in named},
            v={name: np.zeros_like(arr) for name, arr in named},
        )


def adam_step(params, grads: Mapping[str, np.ndarray], state: AdamState, lr: float):
    """One bias-corrected Adam update, in place. Returns (params, state)."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, arr in _named_arrays(params):
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient in {name!r}", [])
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        arr -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def per_class_stats(confusion: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(precision, recall, f1) per class; zero-denominator cases give 0."""
    cm = np.asarray(confusion, dtype=np.float64)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(2 * tp + fp + fn > 0, 2 * tp / (2 * tp + fp + fn), 0.0)
    return precision, recall, f1


def macro_f1(confusion) -> float:
    """Unweighted mean per-class F1 over every class of the matrix; classes
    absent from both truth and prediction count as 0."""
    cm = np.asarray(confusion)
    if (cm < 0).any():
        raise ValueError("confusion matrix entries must be nonnegative")
    return float(per_class_stats(cm)[2].mean())


def accuracy(confusion) -> float:
    cm = np.asarray(confusion, dtype=np.float64)
    total = cm.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(cm) / total)


@dataclass(eq=False)
class EvalReport:
    mode: str
    n: int
    accuracy: float
    macro_f1: float
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    confusion: np.ndarray

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "n": self.n,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class_precision": self.per_class_precision.tolist(),
            "per_class_recall": self.per_class_recall.tolist(),
            "per_class_f1": self.per_class_f1.tolist(),
            "confusion": self.confusion.tolist(),
        }


def report_from_predictions(truths: Sequence[int], preds: Sequence[int],
                            n_classes: int, mode: str) -> EvalReport:
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(truths, preds):
        confusion[t, p] += 1
    precision, recall, f1 = per_class_stats(confusion)
    return EvalReport(
        mode=mode,
        n=len(truths),
        accuracy=accuracy(confusion),
        macro_f1=macro_f1(confusion),
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
        confusion=confusion,
    )


def evaluate(model: ModelParams, sequences: Sequence[SocialSequence], mode: str) -> EvalReport:
    """Argmax predictions per sequence (lowest index wins ties) scored
    against the taxonomy-wide class set for the chosen mode."""
    if mode not in EVAL_MODES:
        raise ValueError(f"unknown evaluation mode {mode!r}")
    if not sequences:
        raise ValueError("cannot evaluate an empty dataset")
    if mode == "relation-direct" and not model.arch.has_relation_head:
        raise ValueError(f"mode {mode!r} needs a relation head ({model.arch.value})")
    if mode == "domain-direct" and not model.arch.has_domain_head:
        raise ValueError(f"mode {mode!r} needs a domain head ({model.arch.value})")
    if mode == "domain-inferred" and not model.arch.has_relation_head:
        raise ValueError(f"mode {mode!r} needs a relation head ({model.arch.value})")

    truths = []
    preds = []
    for seq in sequences:
        out = forward(model, seq.frames)
        if mode == "relation-direct":
            probs = out.relation_probs
            truths.append(int(seq.relation))
        elif mode == "domain-direct":
            probs = out.domain_probs
            truths.append(int(seq.domain))
        else:
            probs = infer_domain_distribution(out.relation_probs)
            truths.append(int(seq.domain))
        preds.append(int(np.argmax(probs)))
    n_classes = N_RELATIONS if mode == "relation-direct" else N_DOMAINS
    return report_from_predictions(truths, preds, n_classes, mode)


@dataclass
class HistoryRecord:
    iteration: int
    lr: float
    train_loss: float
    selection: float
    val_relation_f1: float | None = None
    val_relation_acc: float | None = None
    val_domain_f1: float | None = None
    val_domain_acc: float | None = None
    is_best: bool = False

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class TrainResult:
    model: ModelParams
    history: list[HistoryRecord]
    best_iteration: int
    best_selection: float
    config: TrainConfig
    weights: dict[str, np.ndarray]


def task_class_weights(sequences: Sequence[SocialSequence]) -> dict[str, np.ndarray]:
    rel_counts = np.zeros(N_RELATIONS)
    dom_counts = np.zeros(N_DOMAINS)
    for s in sequences:
        rel_counts[s.relation] += 1
        dom_counts[s.domain] += 1
    return {"relation": class_weights(rel_counts), "domain": class_weights(dom_counts)}


def selection_mode(arch: Arch) -> str:
    """Validation metric used for model selection: relation macro-F1 when a
    relation head exists, domain macro-F1 otherwise."""
    return "relation-direct" if arch.has_relation_head else "domain-direct"


def train(
    cfg: TrainConfig,
    train_set: Sequence[SocialSequence],
    val_set: Sequence[SocialSequence],
    weights: dict[str, np.ndarray] | None = None,
) -> TrainResult:
    """Full-batch training, deterministic given (cfg, data).

    Augments the training side first when cfg.augment_multiplier > 0, then
    runs `iterations` epochs of mean-gradient Adam steps, evaluating
    validation macro-F1 after each step and returning the best snapshot
    (ties resolved to the earliest iteration)."""
    if not train_set or not val_set:
        raise ValueError("train and validation sets must be nonempty")
    rng = Rng(cfg.seed)
    train_seqs = list(train_set)
    if cfg.augment_multiplier > 0:
        aug_cfg = AugmentConfig(
            sigma=cfg.augment_sigma, multiplier=cfg.augment_multiplier, seed=cfg.seed
        )
        train_seqs += augment(train_seqs, aug_cfg, rng.split("augment"))
    if weights is None:
        weights = task_class_weights(train_seqs)

    input_dim = train_seqs[0].frames.shape[1]
    model = init_params(cfg.arch, input_dim, cfg.hidden, rng.split("init"))
    state = AdamState.for_params(model)
    drop_rng = rng.split("dropout")
    sel_mode = selection_mode(cfg.arch)

    history: list[HistoryRecord] = []
    best_model = None
    best_sel = -np.inf
    best_iter = -1
    n = len(train_seqs)
    labels_cache = [(int(s.domain), int(s.relation)) for s in train_seqs]
    for it in range(cfg.iterations):
        for name, arr in model.named_arrays():
            if not np.all(np.isfinite(arr)):
                raise TrainingDiverged(
                    f"non-finite parameters in {name!r} at iteration {it}", history)
        lr = lr_schedule(it, cfg)
        total = {name: np.zeros_like(arr) for name, arr in model.named_arrays()}
        loss_sum = 0.0
        # CE terms per sequence; the L2 term and its gradient are identical
        # for every sequence, so they are added once to the mean.
        for seq, labels in zip(train_seqs, labels_cache):
            out = forward(model, seq.frames, train=True,
                          dropout_rate=cfg.dropout, rng=drop_rng)
            loss_sum += joint_loss(out, labels, weights, 0.0, model)
            for name, g in backward(model, out.trace, labels, weights, 0.0).items():
                total[name] += g
        mean_loss = loss_sum / n + l2_penalty(model.weight_matrices(), cfg.l2)
        if not np.isfinite(mean_loss):
            raise TrainingDiverged(f"non-finite loss at iteration {it}", history)
        for name, arr in model.named_arrays():
            total[name] /= n
            if cfg.l2 and name.endswith(".w"):
                total[name] += cfg.l2 * arr
        try:
            adam_step(model, total, state, lr)
        except TrainingDiverged as exc:
            raise TrainingDiverged(f"{exc} at iteration {it}", history) from None

        record = HistoryRecord(iteration=it, lr=lr, train_loss=mean_loss, selection=0.0)
        if model.arch.has_relation_head:
            rel_report = evaluate(model, val_set, "relation-direct")
            record.val_relation_f1 = rel_report.macro_f1
            record.val_relation_acc = rel_report.accuracy
        if model.arch.has_domain_head:
            dom_report = evaluate(model, val_set, "domain-direct")
            record.val_domain_f1 = dom_report.macro_f1
            record.val_domain_acc = dom_report.accuracy
        record.selection = (
            record.val_relation_f1 if sel_mode == "relation-direct" else record.val_domain_f1
        )
        if record.selection > best_sel:
            best_sel = record.selection
            best_iter = it
            best_model = model.copy()
            record.is_best = True
        history.append(record)

    return TrainResult(
        model=best_model,
        history=history,
        best_iteration=best_iter,
        best_selection=best_sel,
        config=cfg,
        weights=weights,
    )


@dataclass
class BenchmarkRow:
    task: str  # REL / DOM / DOM-INF
    strategy: str  # ST / MT-IND / MT-TD
    subset: str  # attribute mask name
    f1_pct: float | None
    acc_pct: float | None
    error: str | None = None

    @property
    def label(self) -> str:
        return f"{self.task}-{self.strategy}"

    def to_json(self) -> dict:
        return asdict(self)


_STRATEGIES = (
    ("ST", {"relation": Arch.ST_REL, "domain": Arch.ST_DOM}),
    ("MT-IND", {"relation": Arch.MT_IND, "domain": Arch.MT_IND}),
    ("MT-TD", {"relation": Arch.MT_TD, "domain": Arch.MT_TD}),
)

_TASK_MODES = (
    ("REL", "relation", "relation-direct"),
    ("DOM", "domain", "domain-direct"),
    ("DOM-INF", "relation", "domain-inferred"),
)


def benchmark_suite(
    cfg: TrainConfig,
    sequences_by_group: Mapping[tuple[str, str], Sequence[SocialSequence]],
    suite,
    masks: Mapping[str, np.ndarray] | None = None,
) -> list[BenchmarkRow]:
    """Train every strategy on every cross-validation split and report mean
    test metrics per (task, strategy, attribute subset).

    `masks` maps subset names to column index arrays; when given, an "ALL"
    subset is (re)built as the union of the others. Cell failures are
    recorded on their row and the rest of the grid still runs.
    """
    if masks is None:
        subset_cols: dict[str, np.ndarray | None] = {"ALL": None}
    else:
        subset_cols = {name: np.asarray(cols, dtype=np.intp) for name, cols in masks.items()}
        others = [set(c.tolist()) for n, c in subset_cols.items() if n != "ALL"]
        if others:  # ALL is always the union of the named subsets
            subset_cols["ALL"] = np.asarray(sorted(set().union(*others)), dtype=np.intp)

    def gather(keys):
        out = []
        for key in keys:
            out.extend(sequences_by_group[tuple(key)])
        return out

    test_seqs = gather(suite.outer.val_groups)
    rows: list[BenchmarkRow] = []
    for subset_name, cols in subset_cols.items():
        def masked(seqs):
            if cols is None:
                return list(seqs)
            return [replace_frames(s, s.frames[:, cols]) for s in seqs]

        trained: dict[Arch, list[ModelParams] | Exception] = {}
        for arch in (Arch.ST_REL, Arch.ST_DOM, Arch.MT_IND, Arch.MT_TD):
            try:
                models = []
                for plan in suite.inner:
                    tr = masked(gather(plan.train_groups))
                    va = masked(gather(plan.val_groups))
                    models.append(train(replace(cfg, arch=arch), tr, va).model)
                trained[arch] = models
            except Exception as exc:  # keep the rest of the grid running
                trained[arch] = exc

        mtest = masked(test_seqs)
        for task_name, head, mode in _TASK_MODES:
            for strat_name, archs in _STRATEGIES:
                arch = archs[head]
                outcome = trained[arch]
                if isinstance(outcome, Exception):
                    rows.append(BenchmarkRow(task_name, strat_name, subset_name,
                                             None, None, error=str(outcome)))
                    continue
                try:
                    reports = [evaluate(m, mtest, mode) for m in outcome]
                    rows.append(BenchmarkRow(
                        task_name, strat_name, subset_name,
                        f1_pct=100.0 * float(np.mean([r.macro_f1 for r in reports])),
                        acc_pct=100.0 * float(np.mean([r.accuracy for r in reports])),
                    ))
                except Exception as exc:
                    rows.append(BenchmarkRow(task_name, strat_name, subset_name,
                                             None, None, error=str(exc)))
    return rows


def replace_frames(seq: SocialSequence, frames: np.ndarray) -> SocialSequence:
    return replace(seq, frames=frames)


def render_benchmark_table(rows: Sequence[BenchmarkRow]) -> str:
    """Human-readable table in the F1-score [%] / Acc [%] layout."""
    label_width = max(len("model"), max((len(f"{r.label}/{r.subset}") for r in rows), default=5))
    lines = [f"{'model':<{label_width}}  {'F1-score [%]':>12}  {'Acc [%]':>8}"]
    for r in rows:
        label = f"{r.label}/{r.subset}" if r.subset != "ALL" else r.label
        if r.error is not None:
            lines.append(f"{label:<{label_width}}  {'ERROR':>12}  {r.error}")
        else:
            lines.append(f"{label:<{label_width}}  {r.f1_pct:>12.2f}  {r.acc_pct:>8.2f}")
    return "\n".join(lines)
