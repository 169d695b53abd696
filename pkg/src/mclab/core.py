"""Core domain types: label spaces, datasets, deterministic RNG, three-way splits.

Labels are dense 0-based integers internally and rendered 1-based in every
human-facing report. All randomness flows through ``Rng``, a descriptor around
a counter-based generator (Philox), so the same seed yields the same stream on
every platform.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "NEW_CLASS",
    "ClassLabel",
    "LabeledDataset",
    "Rng",
    "SplitSpec",
    "class_weights",
    "datasets_equal",
    "exclude_class",
    "largest_remainder",
    "make_label_space",
    "split_dataset",
]

# Sentinel prediction for "none of the known classes"; never a valid true label.
NEW_CLASS = -1


@dataclass(frozen=True)
class ClassLabel:
    """A class in a dense 0-based label space."""

    id: int
    display_name: str

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError(f"label id must be >= 0, got {self.id}")
        if not self.display_name:
            raise ValueError("display_name must be non-empty")

    def render(self) -> str:
        # reports are 1-based
        return f"{self.id + 1}:{self.display_name}"


def make_label_space(names: Sequence[str]) -> tuple[ClassLabel, ...]:
    """Build a dense label space from display names (ids follow list order)."""
    if len(set(names)) != len(names):
        raise ValueError("display names must be unique")
    return tuple(ClassLabel(i, str(n)) for i, n in enumerate(names))


def default_names(k: int) -> tuple[str, ...]:
    return tuple(f"class{i + 1}" for i in range(k))


@dataclass(frozen=True)
class LabeledDataset:
    """Immutable feature/label arrays plus their label space.

    features: float32 array of shape (n, *feature_shape)
    labels:   int64 array of shape (n,), values in [0, K)
    """

    features: np.ndarray
    labels: np.ndarray
    label_space: tuple[ClassLabel, ...]

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=np.float32)
        labs = np.asarray(self.labels, dtype=np.int64)
        # keep instances immutable without freezing caller-owned buffers
        if feats.flags.writeable or not feats.flags.c_contiguous:
            feats = np.array(feats, dtype=np.float32, order="C")
        if labs.flags.writeable or not labs.flags.c_contiguous:
            labs = np.array(labs, dtype=np.int64, order="C")
        if feats.ndim < 2:
            raise ValueError("features must have shape (n, *feature_shape)")
        if labs.ndim != 1 or labs.shape[0] != feats.shape[0]:
            raise ValueError("labels must be a vector aligned with features")
        k = len(self.label_space)
        if k == 0:
            raise ValueError("label space must be non-empty")
        if tuple(l.id for l in self.label_space) != tuple(range(k)):
            raise ValueError("label space ids must be dense and ordered")
        if labs.size and (labs.min() < 0 or labs.max() >= k):
            raise ValueError(f"labels must lie in [0, {k})")
        feats.flags.writeable = False
        labs.flags.writeable = False
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)
        object.__setattr__(self, "label_space", tuple(self.label_space))

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_classes(self) -> int:
        return len(self.label_space)

    @property
    def feature_shape(self) -> tuple[int, ...]:
        return tuple(self.features.shape[1:])

    @property
    def class_counts(self) -> np.ndarray:
        """Per-class sample counts, length K."""
        return np.bincount(self.labels, minlength=self.n_classes)

    def sample(self, i: int) -> tuple[np.ndarray, ClassLabel]:
        return self.features[i], self.label_space[int(self.labels[i])]

    def subset(self, indices: Iterable[int] | np.ndarray) -> "LabeledDataset":
        idx = np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices,
                         dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.label_space)


def datasets_equal(a: LabeledDataset, b: LabeledDataset, compare_names: bool = False) -> bool:
    """Exact equality of shape, labels and features (names optional)."""
    if a.n_classes != b.n_classes or a.feature_shape != b.feature_shape or len(a) != len(b):
        return False
    if compare_names:
        if tuple(l.display_name for l in a.label_space) != tuple(
            l.display_name for l in b.label_space
        ):
            return False
    return bool(np.array_equal(a.labels, b.labels) and np.array_equal(a.features, b.features))


def _word_for(part: int | str) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream words must be non-negative")
        return int(part)
    digest = hashlib.sha256(b"mclab-stream:" + str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class Rng:
    """Descriptor for a counter-based random stream.

    ``words`` is the full derivation path (seed first). Two descriptors with
    the same words produce bit-identical streams on every platform; distinct
    words produce independent streams.
    """

    words: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.words:
            raise ValueError("Rng needs at least a seed word")
        object.__setattr__(self, "words", tuple(int(w) for w in self.words))

    @classmethod
    def from_seed(cls, seed: int) -> "Rng":
        return cls((_word_for(seed),))

    def derive(self, *path: int | str) -> "Rng":
        if not path:
            raise ValueError("derive needs at least one path element")
        return Rng(self.words + tuple(_word_for(p) for p in path))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(list(self.words))
        return np.random.Generator(np.random.Philox(seed=ss))


def derived_seed(seed: int, *path: int | str) -> int:
    """A plain 63-bit integer seed derived from a master seed and a path."""
    h = hashlib.sha256()
    h.update(b"mclab-seed")
    for w in (seed,) + path:
        h.update(b"/" + str(_word_for(w)).encode("ascii"))
    return int.from_bytes(h.digest()[:8], "big") >> 1


def largest_remainder(ideals: np.ndarray | Sequence[float], total: int) -> np.ndarray:
    """Round non-negative ideals to integers summing exactly to ``total``.

    Ties between equal remainders break toward the lower index.
    """
    ideal = np.asarray(ideals, dtype=np.float64)
    if ideal.ndim != 1 or np.any(ideal < -1e-12):
        raise ValueError("ideals must be a non-negative vector")
    ideal = np.maximum(ideal, 0.0)
    floors = np.floor(ideal + 1e-12).astype(np.int64)
    leftover = int(total) - int(floors.sum())
    if leftover < 0 or leftover > ideal.size:
        raise ValueError("ideals do not sum to total")
    if leftover:
        remainders = ideal - floors
        order = np.argsort(-remainders, kind="stable")
        floors[order[:leftover]] += 1
    return floors


@dataclass(frozen=True)
class SplitSpec:
    """Three-way split fractions (train, correct, test) plus seed and strategy."""

    fractions: tuple[float, float, float] = (0.5, 0.25, 0.25)
    seed: int = 0
    stratified: bool = True

    def validate(self) -> None:
        if len(self.fractions) < 2:
            raise ValueError("need at least two split fractions")
        if any(f <= 0 for f in self.fractions):
            raise ValueError("split fractions must be positive")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1 within 1e-9")


def _stratified_allocation(class_counts: np.ndarray, fractions: Sequence[float]) -> np.ndarray:
    """Integer allocation matrix (K, S) with exact row sums (= class counts),
    exact column sums (= largest-remainder totals of n*fractions) and every
    cell within floor/ceil of its exact proportion."""
    counts = np.asarray(class_counts, dtype=np.int64)
    fracs = np.asarray(fractions, dtype=np.float64)
    n = int(counts.sum())
    col_targets = largest_remainder(n * fracs, n)

    ideal = np.outer(counts, fracs)
    lo = np.floor(ideal + 1e-12).astype(np.int64)
    hi = lo + (ideal - lo > 1e-12).astype(np.int64)
    x = np.stack([largest_remainder(ideal[i], int(counts[i])) for i in range(counts.size)])

    # Repair column sums by moving single samples along within-class edges;
    # every move keeps cells inside [lo, hi] so the +-1 bound is preserved.
    def repair() -> None:
        while True:
            diff = x.sum(axis=0) - col_targets
            surplus = np.nonzero(diff > 0)[0]
            if surplus.size == 0:
                return
            start = int(surplus[0])
            parents: dict[int, tuple[int, int]] = {start: (-1, -1)}
            frontier = [start]
            goal = -1
            while frontier and goal < 0:
                nxt: list[int] = []
                for u in frontier:
                    for v in range(x.shape[1]):
                        if v in parents or v == u:
                            continue
                        movable = np.nonzero((x[:, u] > lo[:, u]) & (x[:, v] < hi[:, v]))[0]
                        if movable.size == 0:
                            continue
                        parents[v] = (u, int(movable[0]))
                        if diff[v] < 0:
                            goal = v
                            break
                        nxt.append(v)
                    if goal >= 0:
                        break
                frontier = nxt
            if goal < 0:
                raise RuntimeError("stratified allocation repair failed")
            v = goal
            while parents[v][0] >= 0:
                u, cls = parents[v]
                x[cls, u] -= 1
                x[cls, v] += 1
                v = u

    repair()
    return x


def split_dataset(
    data: LabeledDataset, spec: SplitSpec
) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Deterministic three-way split; stratified keeps per-class proportions
    within one sample of exact.

    Returns (train, correct, test). Membership is randomized by the seed but
    each part preserves the original sample order.
    """
    spec.validate()
    n = len(data)
    s = len(spec.fractions)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    gen = Rng.from_seed(spec.seed).derive("split").generator()

    if spec.stratified:
        counts = data.class_counts
        thin = np.nonzero((counts > 0) & (counts < s))[0]
        if thin.size:
            raise ValueError(
                f"class {int(thin[0])} has {int(counts[thin[0]])} samples, "
                f"fewer than the {s} splits"
            )
        alloc = _stratified_allocation(counts, spec.fractions)
        parts: list[list[np.ndarray]] = [[] for _ in range(s)]
        for cls in range(data.n_classes):
            idx = np.nonzero(data.labels == cls)[0]
            if idx.size == 0:
                continue
            perm = idx[gen.permutation(idx.size)]
            stops = np.cumsum(alloc[cls])
            start = 0
            for j in range(s):
                parts[j].append(perm[start : int(stops[j])])
                start = int(stops[j])
        chosen = [np.sort(np.concatenate(p)) if p else np.empty(0, np.int64) for p in parts]
    else:
        totals = largest_remainder(n * np.asarray(spec.fractions), n)
        perm = gen.permutation(n)
        stops = np.cumsum(totals)
        chosen = []
        start = 0
        for j in range(s):
            chosen.append(np.sort(perm[start : int(stops[j])]))
            start = int(stops[j])

    out = tuple(data.subset(c) for c in chosen)
    return out  # type: ignore[return-value]


def exclude_class(data: LabeledDataset, excluded: ClassLabel | int) -> LabeledDataset:
    """Drop every sample of one class; other samples keep their order.

    The label space is unchanged, so downstream components still see K classes.
    """
    cls = excluded.id if isinstance(excluded, ClassLabel) else int(excluded)
    if cls < 0 or cls >= data.n_classes:
        raise ValueError(f"unknown class id {cls} for a {data.n_classes}-class dataset")
    keep = np.nonzero(data.labels != cls)[0]
    return data.subset(keep)


def class_weights(
    data: LabeledDataset, excluded: Iterable[ClassLabel | int] = ()
) -> np.ndarray:
    """Inverse-frequency weights w_i = N / n_i (float64, length K).

    N counts only samples of non-excluded classes, so masking a class and
    deleting its samples yield identical weights. Excluded classes get 0;
    any other empty class is an error.
    """
    excl = {e.id if isinstance(e, ClassLabel) else int(e) for e in excluded}
    for cls in excl:
        if cls < 0 or cls >= data.n_classes:
            raise ValueError(f"unknown excluded class id {cls}")
    counts = data.class_counts
    active = np.array([i not in excl for i in range(data.n_classes)])
    empty = np.nonzero(active & (counts == 0))[0]
    if empty.size:
        raise ValueError(f"class {int(empty[0])} has no samples and is not excluded")
    n_eff = int(counts[active].sum())
    weights = np.zeros(data.n_classes, dtype=np.float64)
    weights[active] = n_eff / counts[active]
    return weights
