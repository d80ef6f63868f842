"""Prompt training, base-to-novel evaluation, and the cross-task harness.

Training minimizes batch-mean cross-entropy between image features and the
composed per-class text features (encoder frozen, only soft tokens move),
with an optional half-cosine learning-rate decay. Evaluation is top-1
accuracy under the cosine/temperature scoring rule; base-to-novel runs
train on the base half of a task's classes and score the held-out novel
half zero-shot, summarized by the harmonic mean.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .data import Task
from .errors import ContractError, DataError, NumericsError
from .optim import SGD, cosine_lr
from .prompts import PromptLayout, SoftPromptBank, class_text_features, template_rows_for
from .serialize import dump_json, expect_version, load_json

REPORT_KIND = "eval_report"
REPORT_VERSION = 1

SCHEDULES = ("cosine", "constant")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr_init: float = 0.002
    schedule: str = "cosine"
    seed: int = 0
    layout: PromptLayout = field(default_factory=PromptLayout)
    attributes: tuple = ()  # selected combination; () trains the classic form
    soft_len: int = 2
    attr_soft_len: int = 2
    init_scheme: str = "phrase_init"

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr_init <= 0:
            raise ContractError(f"lr_init must be positive, got {self.lr_init}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.schedule not in SCHEDULES:
            raise ContractError(f"unknown schedule {self.schedule!r}")
        self.layout.validate()
        return self

    def effective_layout(self) -> PromptLayout:
        """Layout with the selected attribute combination substituted in."""
        return replace(self.layout, attribute_names=tuple(self.attributes))


def make_bank(config: TrainConfig, encoder) -> SoftPromptBank:
    layout = config.effective_layout()
    return SoftPromptBank.create(
        embed_dim=encoder.config.embed_dim,
        soft_len=config.soft_len,
        attribute_names=layout.attribute_names,
        attr_soft_len=config.attr_soft_len,
        depth=layout.depth,
        seed=_subseed(config.seed, "init"),
        scheme=config.init_scheme,
        template_rows=template_rows_for(encoder),
    )


def _subseed(seed: int, tag: str) -> int:
    return int(np.random.SeedSequence([int(seed), zlib.crc32(tag.encode())]).generate_state(1)[0])


# -- core loops -----------------------------------------------------------------


def train_prompts(task: Task, config: TrainConfig, bank: SoftPromptBank, encoder):
    """Minimize Eq.-7-style cross-entropy over a task's train split.

    Returns (bank, history) where history is the per-epoch mean loss.
    Class text features are recomposed every step since the bank changes.
    """
    config.validate()
    layout = config.effective_layout().validate(encoder.config.num_layers)
    x, y = task.split("train")
    if len(y) == 0:
        raise DataError("empty training split")
    opt = SGD(bank.parameters(), lr=config.lr_init)
    rng = np.random.default_rng(_subseed(config.seed, "train.order"))
    steps_per_epoch = math.ceil(len(y) / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    history = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(y))
        epoch_losses = []
        for b in range(steps_per_epoch):
            rows = order[b * config.batch_size : (b + 1) * config.batch_size]
            if config.schedule == "cosine":
                opt.lr = cosine_lr(step, total_steps, config.lr_init)
            try:
                feats = class_text_features(encoder, bank, layout, task.class_names)
                u = encoder.encode_image(x[rows])
                loss = T.cross_entropy(encoder.class_logits(u, feats), y[rows])
            except NumericsError as exc:
                raise NumericsError(
                    f"non-finite loss at epoch {epoch}, batch {b}: {exc}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(loss.item())
            step += 1
        history.append(float(np.mean(epoch_losses)))
    return bank, history


def evaluate(encoder, bank: SoftPromptBank, layout: PromptLayout, task: Task,
             split: str = "test") -> float:
    """Top-1 accuracy in percent; class features computed once per call."""
    x, y = task.split(split)
    if len(y) == 0:
        raise DataError(f"empty split {split!r}")
    feats = class_text_features(encoder, bank, layout, task.class_names)
    u = encoder.encode_image(x)
    logits = encoder.class_logits(u, feats)
    pred = logits.data.argmax(axis=1)  # np.argmax: ties go to the lowest index
    return float((pred == y).mean() * 100.0)


def per_class_accuracy(encoder, bank: SoftPromptBank, layout: PromptLayout, task: Task,
                       split: str = "test") -> dict:
    x, y = task.split(split)
    feats = class_text_features(encoder, bank, layout, task.class_names)
    pred = encoder.class_logits(encoder.encode_image(x), feats).data.argmax(axis=1)
    out = {}
    for c, name in enumerate(task.class_names):
        mask = y == c
        out[name] = float((pred[mask] == c).mean() * 100.0) if mask.any() else 0.0
    return out


# -- protocol helpers --------------------------------------------------------------


def base_novel_split(class_ids):
    """Sorted ids; first ceil(N/2) are base, the rest novel."""
    ids = sorted(class_ids)
    if len(ids) < 2:
        raise DataError(f"need at least 2 classes to split, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise DataError("duplicate class ids")
    cut = (len(ids) + 1) // 2
    return ids[:cut], ids[cut:]


def harmonic_mean(base_acc: float, novel_acc: float) -> float:
    if base_acc < 0 or novel_acc < 0:
        raise ContractError(f"accuracies must be nonnegative, got {base_acc}, {novel_acc}")
    if base_acc == 0.0 or novel_acc == 0.0:
        return 0.0
    return 2.0 * base_acc * novel_acc / (base_acc + novel_acc)


@dataclass
class EvalReport:
    base_accuracy: float
    novel_accuracy: float
    harmonic_mean: float
    per_class_accuracy: dict
    seeds_aggregated: int = 1

    def validate(self) -> "EvalReport":
        for name in ("base_accuracy", "novel_accuracy", "harmonic_mean"):
            value = getattr(self, name)
            if not 0.0 <= value <= 100.0:
                raise ContractError(f"{name} out of range: {value}")
        expected = harmonic_mean(self.base_accuracy, self.novel_accuracy)
        if abs(expected - self.harmonic_mean) > 0.01:
            raise ContractError(
                f"harmonic mean {self.harmonic_mean:.4f} inconsistent with "
                f"({self.base_accuracy:.4f}, {self.novel_accuracy:.4f})"
            )
        return self

    def to_dict(self) -> dict:
        return {
            "base_accuracy": self.base_accuracy,
            "novel_accuracy": self.novel_accuracy,
            "harmonic_mean": self.harmonic_mean,
            "per_class_accuracy": dict(sorted(self.per_class_accuracy.items())),
            "seeds_aggregated": self.seeds_aggregated,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "EvalReport":
        return cls(
            base_accuracy=payload["base_accuracy"],
            novel_accuracy=payload["novel_accuracy"],
            harmonic_mean=payload["harmonic_mean"],
            per_class_accuracy=dict(payload["per_class_accuracy"]),
            seeds_aggregated=payload.get("seeds_aggregated", 1),
        ).validate()


def run_base_to_novel(base_task: Task, novel_task: Task, config: TrainConfig,
                      encoder) -> EvalReport:
    """Train on the base half, evaluate both halves, report with the HM."""
    bank = make_bank(config, encoder)
    train_prompts(base_task, config, bank, encoder)
    layout = config.effective_layout()
    base_acc = evaluate(encoder, bank, layout, base_task, "test")
    novel_acc = evaluate(encoder, bank, layout, novel_task, "test")
    per_class = per_class_accuracy(encoder, bank, layout, base_task, "test")
    per_class.update(per_class_accuracy(encoder, bank, layout, novel_task, "test"))
    return EvalReport(
        base_accuracy=base_acc,
        novel_accuracy=novel_acc,
        harmonic_mean=harmonic_mean(base_acc, novel_acc),
        per_class_accuracy=per_class,
    ).validate()


def aggregate_reports(reports) -> EvalReport:
    """Arithmetic mean over seeds; the HM is recomputed from the mean accuracies."""
    reports = list(reports)
    if not reports:
        raise DataError("nothing to aggregate")
    base = float(np.mean([r.base_accuracy for r in reports]))
    novel = float(np.mean([r.novel_accuracy for r in reports]))
    names = set().union(*(r.per_class_accuracy for r in reports))
    per_class = {
        n: float(np.mean([r.per_class_accuracy.get(n, 0.0) for r in reports])) for n in names
    }
    return EvalReport(
        base_accuracy=base,
        novel_accuracy=novel,
        harmonic_mean=harmonic_mean(base, novel),
        per_class_accuracy=per_class,
        seeds_aggregated=sum(r.seeds_aggregated for r in reports),
    ).validate()


# -- report files ---------------------------------------------------------------------


def save_report_records(records, path: str) -> None:
    """records: list of {config_hash, seed, report: EvalReport}."""
    dump_json(
        {
            "kind": REPORT_KIND,
            "format_version": REPORT_VERSION,
            "records": [
                {
                    "config_hash": r["config_hash"],
                    "seed": r["seed"],
                    "report": r["report"].to_dict(),
                }
                for r in records
            ],
        },
        path,
    )


def load_report_records(path: str):
    payload = load_json(path)
    expect_version(payload, REPORT_KIND, REPORT_VERSION, path)
    return [
        {
            "config_hash": rec["config_hash"],
            "seed": rec["seed"],
            "report": EvalReport.from_dict(rec["report"]),
        }
        for rec in payload["records"]
    ]


# -- cross-task transfer ------------------------------------------------------------------


def cross_dataset_eval(encoder, bank: SoftPromptBank, layout: PromptLayout,
                       source_task: Task, target_tasks) -> dict:
    """Frozen trained prompts scored against each target's class names.

    Returns {"source": acc, "targets": {name: acc}, "average": mean target acc}.
    """
    targets = list(target_tasks)
    for t in targets:
        if t.vocabulary.words != source_task.vocabulary.words:
            raise DataError(f"target task {t.name!r} does not share the source vocabulary")
    per_target = {t.name: evaluate(encoder, bank, layout, t, "test") for t in targets}
    return {
        "source": evaluate(encoder, bank, layout, source_task, "test"),
        "targets": per_target,
        "average": float(np.mean(list(per_target.values()))) if per_target else 0.0,
    }
