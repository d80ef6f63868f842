"""Seeded synthetic classification tasks with explicit latent attribute structure.

Each task draws a semantic vocabulary: every latent attribute has a base
word (``color``) whose value words (``color0``, ``color1``, ...) are unit
vectors clustered around the base word's distinct direction, so a hard
attribute anchor genuinely relates to the value words appearing in class
names while staying unrelated to other attributes' values. A class is a
full signature (one value per latent attribute, distinct over the
informative ones) plus a unique id word; its name lists every signature
value followed by the id word, so the uninformative values are in-name
distractors that an anchored prompt can learn to ignore.

Raw image vectors mix two parts, balanced by ``attribute_signal``: a
systematic part (a fixed seeded linear map applied to the sum of the
class's informative value vectors, shared across the whole task family)
and an idiosyncratic per-class offset keyed to the id word. The offset is
unrelated to the id word's embedding, so no prompt can map novel id words
to their offsets: whatever accuracy survives on unseen classes must come
through the attribute path. That is the knob that makes "attributes help
on novel classes" falsifiable.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .serialize import dump_json, expect_version, load_json
from .vocab import EOS, SOS, Vocabulary

DATASET_KIND = "dataset"
DATASET_VERSION = 1

SPLITS = ("train", "val", "test")

TEMPLATE_WORDS = ("a", "photo", "of")


def _rng(*keys):
    """Generator keyed by integers and strings (content-addressed streams)."""
    entropy = [k if isinstance(k, int) else zlib.crc32(str(k).encode()) for k in keys]
    return np.random.default_rng(entropy)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class LatentAttribute:
    name: str
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))


def default_attributes(num_attributes: int = 4, values_per_attribute: int = 8):
    names = ("color", "shape", "size", "texture", "material", "pattern")[:num_attributes]
    return tuple(
        LatentAttribute(n, tuple(f"{n}{j}" for j in range(values_per_attribute)))
        for n in names
    )


@dataclass(frozen=True)
class TaskSpec:
    num_classes: int = 8
    raw_feature_dim: int = 16
    embed_dim: int = 32
    latent_attributes: tuple = field(default_factory=default_attributes)
    informative_attributes: tuple = ("color", "shape")
    samples_per_class: int = 16  # per split: train, val, and test each get this many
    noise_std: float = 0.1
    attribute_signal: float = 1.0  # 1: images carry only attribute content; 0: only offsets
    value_spread: float = 1.0  # distance of value words from their base word
    include_id_words: bool = True  # False: class names carry value words only
    feature_map: str = "random"  # how attribute content becomes image features
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "latent_attributes", tuple(self.latent_attributes))
        object.__setattr__(self, "informative_attributes", tuple(self.informative_attributes))

    def validate(self) -> "TaskSpec":
        if self.num_classes < 2:
            raise DataError(f"need at least 2 classes, got {self.num_classes}")
        if self.samples_per_class < 1:
            raise DataError("samples_per_class must be positive")
        if self.noise_std < 0:
            raise DataError(f"noise_std must be nonnegative, got {self.noise_std}")
        if not 0.0 <= self.attribute_signal <= 1.0:
            raise DataError(f"attribute_signal must lie in [0, 1], got {self.attribute_signal}")
        if self.feature_map not in ("random", "identity"):
            raise DataError(f"unknown feature_map {self.feature_map!r}")
        if self.feature_map == "identity" and self.raw_feature_dim != self.embed_dim:
            raise DataError(
                "identity feature_map needs raw_feature_dim == embed_dim, got "
                f"{self.raw_feature_dim} != {self.embed_dim}"
            )
        names = [a.name for a in self.latent_attributes]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate attribute names: {names}")
        missing = set(self.informative_attributes) - set(names)
        if missing:
            raise DataError(f"informative attributes not declared: {sorted(missing)}")
        if not self.informative_attributes:
            raise DataError("need at least one informative attribute")
        capacity = 1
        for attr in self.latent_attributes:
            if attr.name in self.informative_attributes:
                capacity *= len(attr.values)
        if capacity < self.num_classes:
            raise DataError(
                f"only {capacity} distinct informative signatures for "
                f"{self.num_classes} classes"
            )
        return self

    def attribute(self, name: str) -> LatentAttribute:
        for attr in self.latent_attributes:
            if attr.name == name:
                return attr
        raise DataError(f"no attribute named {name!r}")

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "raw_feature_dim": self.raw_feature_dim,
            "embed_dim": self.embed_dim,
            "latent_attributes": [[a.name, list(a.values)] for a in self.latent_attributes],
            "informative_attributes": list(self.informative_attributes),
            "samples_per_class": self.samples_per_class,
            "noise_std": self.noise_std,
            "attribute_signal": self.attribute_signal,
            "value_spread": self.value_spread,
            "include_id_words": self.include_id_words,
            "feature_map": self.feature_map,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "TaskSpec":
        payload = dict(payload)
        payload["latent_attributes"] = tuple(
            LatentAttribute(name, tuple(values))
            for name, values in payload.get("latent_attributes", [])
        )
        payload["informative_attributes"] = tuple(payload.get("informative_attributes", ()))
        return cls(**payload).validate()


@dataclass
class Task:
    """One generated classification task (or one base/novel half of one)."""

    spec: TaskSpec
    name: str
    vocabulary: Vocabulary
    class_names: list
    class_signatures: list  # per class: {attribute name -> value word}
    attribute_names: list  # base words, the search pool for this task
    prototypes: np.ndarray  # [num_classes, raw_feature_dim]
    splits: dict  # split -> (x [n, raw], y [n])

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def split(self, name: str):
        if name not in self.splits:
            raise DataError(f"task has no split {name!r}")
        return self.splits[name]

    def save(self, path: str) -> None:
        dump_json(
            {
                "kind": DATASET_KIND,
                "format_version": DATASET_VERSION,
                "spec": self.spec.to_dict(),
                "name": self.name,
                "vocabulary": self.vocabulary.to_dict(),
                "class_names": self.class_names,
                "class_signatures": self.class_signatures,
                "attribute_names": self.attribute_names,
                "prototypes": self.prototypes.tolist(),
                "splits": {
                    k: {"x": x.tolist(), "y": y.tolist()} for k, (x, y) in self.splits.items()
                },
            },
            path,
        )

    @classmethod
    def load(cls, path: str, expected_spec: TaskSpec = None) -> "Task":
        payload = load_json(path)
        expect_version(payload, DATASET_KIND, DATASET_VERSION, path)
        spec = TaskSpec.from_dict(payload["spec"])
        if expected_spec is not None and spec != expected_spec.validate():
            raise DataError(f"{path}: dataset spec does not match the runtime spec")
        splits = {
            k: (
                np.asarray(v["x"], dtype=np.float64),
                np.asarray(v["y"], dtype=np.int64),
            )
            for k, v in payload["splits"].items()
        }
        return cls(
            spec=spec,
            name=payload["name"],
            vocabulary=Vocabulary.from_dict(payload["vocabulary"]),
            class_names=list(payload["class_names"]),
            class_signatures=[dict(s) for s in payload["class_signatures"]],
            attribute_names=list(payload["attribute_names"]),
            prototypes=np.asarray(payload["prototypes"], dtype=np.float64),
            splits=splits,
        )


# -- vocabulary construction ---------------------------------------------------------


def _build_vocabulary(spec: TaskSpec, id_words) -> Vocabulary:
    """Vocabulary with a two-hop routing geometry.

    Every base word shares one "attribute axis" direction and adds its own
    distinct direction; the end sentinel sits on the axis itself, so under
    similarity-driven attention the readout position listens to attribute
    anchors rather than to raw name tokens. Value words cluster around their
    base's *distinct* direction only: an anchor attends to its own attribute's
    values (one similarity hop) and the readout attends to anchors (the second
    hop), while value and id words stay invisible to the readout directly.
    """
    d = spec.embed_dim
    rng = _rng(spec.seed, "vocab")
    axis = _unit(_rng(spec.seed, "attribute_axis").standard_normal(d))
    words = [SOS, EOS]
    vectors = [_unit(rng.standard_normal(d)), axis.copy()]
    for word in TEMPLATE_WORDS:
        words.append(word)
        vectors.append(_unit(rng.standard_normal(d)))
    for attr in spec.latent_attributes:
        distinct = _unit(_rng(spec.seed, "base", attr.name).standard_normal(d))
        words.append(attr.name)
        vectors.append(_unit(axis + distinct))
        for value in attr.values:
            noise = _unit(_rng(spec.seed, "value", value).standard_normal(d))
            words.append(value)
            vectors.append(_unit(distinct + spec.value_spread * noise))
    for word in id_words:
        words.append(word)
        vectors.append(_unit(_rng(spec.seed, "id", word).standard_normal(d)))
    return Vocabulary(words, np.asarray(vectors))


# -- class construction ------------------------------------------------------------------


def _draw_signatures(spec: TaskSpec, count: int, stream: str):
    """``count`` distinct informative signatures plus free values elsewhere."""
    rng = _rng(spec.seed, "signatures", stream)
    informative = [spec.attribute(n) for n in spec.informative_attributes]
    seen = set()
    signatures = []
    while len(signatures) < count:
        sig = tuple(attr.values[rng.integers(len(attr.values))] for attr in informative)
        if sig in seen:
            continue
        seen.add(sig)
        full = dict(zip(spec.informative_attributes, sig))
        for attr in spec.latent_attributes:
            if attr.name not in full:
                full[attr.name] = attr.values[rng.integers(len(attr.values))]
        signatures.append(full)
    return signatures


def _class_name(spec: TaskSpec, signature: dict, id_word: str) -> str:
    # the full signature appears in the name, so uninformative value words act
    # as distractors that an attribute anchor must select against; the id word
    # names the class-specific offset (signatures are distinct without it)
    values = [signature[a.name] for a in spec.latent_attributes]
    return " ".join(values + [id_word] if spec.include_id_words else values)


def _feature_map(spec: TaskSpec) -> np.ndarray:
    # identity: image prototypes live in embedding coordinates, so image and
    # text content can match without learning a change of basis
    if spec.feature_map == "identity":
        return np.eye(spec.raw_feature_dim)
    rng = _rng(spec.seed, "feature_map")
    return rng.standard_normal((spec.raw_feature_dim, spec.embed_dim)) / math.sqrt(
        spec.embed_dim
    )


def _prototype(spec: TaskSpec, vocab: Vocabulary, fmap: np.ndarray, signature: dict,
               id_word: str) -> np.ndarray:
    content = sum(
        vocab.vectors[vocab.id_of(signature[n])] for n in spec.informative_attributes
    )
    systematic = _unit(fmap @ content)
    offset = _unit(_rng(spec.seed, "offset", id_word).standard_normal(spec.raw_feature_dim))
    s = spec.attribute_signal
    return _unit(s * systematic + (1.0 - s) * offset)


def _sample_split(spec: TaskSpec, prototypes: np.ndarray, split: str, task_tag: str):
    xs, ys = [], []
    for c in range(len(prototypes)):
        rng = _rng(spec.seed, "samples", task_tag, split, c)
        noise = rng.standard_normal((spec.samples_per_class, spec.raw_feature_dim))
        xs.append(prototypes[c] + spec.noise_std * noise)
        ys.append(np.full(spec.samples_per_class, c, dtype=np.int64))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    order = _rng(spec.seed, "order", task_tag, split).permutation(len(y))
    return x[order], y[order]


def _build_task(spec: TaskSpec, vocab: Vocabulary, signatures, id_words, name: str) -> Task:
    fmap = _feature_map(spec)
    prototypes = np.stack(
        [
            _prototype(spec, vocab, fmap, sig, idw)
            for sig, idw in zip(signatures, id_words)
        ]
    )
    names = [_class_name(spec, sig, idw) for sig, idw in zip(signatures, id_words)]
    splits = {s: _sample_split(spec, prototypes, s, name) for s in SPLITS}
    return Task(
        spec=spec,
        name=name,
        vocabulary=vocab,
        class_names=names,
        class_signatures=list(signatures),
        attribute_names=[a.name for a in spec.latent_attributes],
        prototypes=prototypes,
        splits=splits,
    )


def generate_task(spec: TaskSpec, name: str = "task0") -> Task:
    """One task: vocabulary, classes with distinct informative signatures, splits."""
    spec.validate()
    id_words = [f"id{c}" for c in range(spec.num_classes)]
    signatures = _draw_signatures(spec, spec.num_classes, name)
    vocab = _build_vocabulary(spec, id_words)
    return _build_task(spec, vocab, signatures, id_words, name)


def make_base_novel_task(spec: TaskSpec, name: str = "task0"):
    """Split one task's classes into (base, novel) with disjoint signatures.

    Base gets the first ceil(C/2) classes of the generated task; novel gets
    the rest. Both halves share the vocabulary and attribute semantics, and
    every class keeps its own train/val/test samples (novel training splits
    exist but go unused by the protocol).
    """
    spec.validate()
    if spec.num_classes < 4:
        raise DataError(f"base/novel construction needs >= 4 classes, got {spec.num_classes}")
    task = generate_task(spec, name)
    cut = (spec.num_classes + 1) // 2
    return _slice_classes(task, range(0, cut), f"{name}.base"), _slice_classes(
        task, range(cut, spec.num_classes), f"{name}.novel"
    )


def _slice_classes(task: Task, class_ids, name: str) -> Task:
    ids = list(class_ids)
    remap = {old: new for new, old in enumerate(ids)}
    splits = {}
    for split, (x, y) in task.splits.items():
        mask = np.isin(y, ids)
        kept_y = np.asarray([remap[int(c)] for c in y[mask]], dtype=np.int64)
        splits[split] = (x[mask], kept_y)
    return Task(
        spec=task.spec,
        name=name,
        vocabulary=task.vocabulary,
        class_names=[task.class_names[i] for i in ids],
        class_signatures=[task.class_signatures[i] for i in ids],
        attribute_names=list(task.attribute_names),
        prototypes=task.prototypes[ids],
        splits=splits,
    )


def make_task_family(spec: TaskSpec, num_tasks: int):
    """Tasks sharing one vocabulary and feature map, for cross-task transfer.

    Task t uses id words ``t{t}id{c}``; signatures are drawn independently
    per task (distinct within a task, free to repeat across tasks).
    """
    spec.validate()
    if num_tasks < 1:
        raise DataError("num_tasks must be positive")
    all_ids = [
        [f"t{t}id{c}" for c in range(spec.num_classes)] for t in range(num_tasks)
    ]
    vocab = _build_vocabulary(spec, [w for ids in all_ids for w in ids])
    tasks = []
    for t in range(num_tasks):
        signatures = _draw_signatures(spec, spec.num_classes, f"family{t}")
        tasks.append(_build_task(spec, vocab, signatures, all_ids[t], f"family{t}"))
    return tasks


def nearest_prototype_accuracy(task: Task, split: str = "test") -> float:
    """Bayes-ish oracle baseline: classify by nearest class prototype."""
    x, y = task.split(split)
    d2 = ((x[:, None, :] - task.prototypes[None, :, :]) ** 2).sum(axis=2)
    return float((d2.argmin(axis=1) == y).mean())
