"""Composition of the base classifier with a corrector under a decision policy.

The corrected classifier returns the base prediction unless the active policy
fires, in which case the corrector's verdict (or the NEW_CLASS sentinel)
replaces it. Raising ``tau`` never increases the number of overrides.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .basemodel import LatentRecord, StagedModel, extract_latents, predict_batch
from .core import NEW_CLASS, LabeledDataset
from .corrector import CorrectorEnsemble

__all__ = [
    "NEW_CLASS",
    "CorrectedPrediction",
    "DecisionPolicy",
    "PredictionLog",
    "compose",
    "compose_batch",
    "read_prediction_log",
    "write_prediction_log",
]

POLICY_KINDS = ("always_corrector", "threshold_override", "excluded_only")

PREDS_MAGIC = "mclab-preds v1"


@dataclass(frozen=True)
class DecisionPolicy:
    """When the corrector's verdict replaces the base prediction.

    always_corrector:    the corrector's argmax always wins.
    threshold_override:  override only when the base model is unsure
                         (max base prob < base_confidence_floor) and the
                         corrector is sure (max corrector prob >= tau).
    excluded_only:       override only when the corrector's argmax is the
                         designated excluded label with probability >= tau;
                         that label plays the role of the "new class". With
                         ``as_new_class`` the override emits the NEW_CLASS
                         sentinel instead of the label itself.

    ``validate`` enforces tau in [0, 1]; the field itself accepts tau > 1 so
    a deliberately unreachable threshold (policy off) stays constructible.
    """

    kind: str = "excluded_only"
    tau: float = 0.5
    base_confidence_floor: float = 0.6
    excluded_label: int | None = None
    as_new_class: bool = False

    def validate(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must be in [0, 1]")
        if not 0.0 <= self.base_confidence_floor <= 1.0:
            raise ValueError("base_confidence_floor must be in [0, 1]")
        if self.kind == "excluded_only" and self.excluded_label is None:
            raise ValueError("excluded_only policy needs excluded_label")


@dataclass(frozen=True)
class CorrectedPrediction:
    base_label: int
    corrected_label: int  # may be NEW_CLASS (-1)
    overridden: bool
    base_probs: np.ndarray
    corrector_probs: np.ndarray


def compose(
    base_probs: np.ndarray,
    latent: LatentRecord,
    ensemble: CorrectorEnsemble,
    policy: DecisionPolicy,
) -> CorrectedPrediction:
    """Apply the policy to one sample's base posteriors and latent record."""
    corr_probs = ensemble.predict_proba(latent)
    return _decide(np.asarray(base_probs, dtype=np.float64), corr_probs, policy)


def _decide(
    base_probs: np.ndarray, corr_probs: np.ndarray, policy: DecisionPolicy
) -> CorrectedPrediction:
    if policy.kind not in POLICY_KINDS:
        raise ValueError(f"unknown policy kind {policy.kind!r}")
    base_label = int(np.argmax(base_probs))
    corr_label = int(np.argmax(corr_probs))
    corrected = base_label
    if policy.kind == "always_corrector":
        corrected = corr_label
    elif policy.kind == "threshold_override":
        if float(base_probs.max()) < policy.base_confidence_floor and float(
            corr_probs.max()
        ) >= policy.tau:
            corrected = corr_label
    else:  # excluded_only
        if policy.excluded_label is None:
            raise ValueError("excluded_only policy needs excluded_label")
        exc = int(policy.excluded_label)
        if corr_label == exc and float(corr_probs[exc]) >= policy.tau:
            corrected = NEW_CLASS if policy.as_new_class else exc
    return CorrectedPrediction(
        base_label=base_label,
        corrected_label=corrected,
        overridden=corrected != base_label,
        base_probs=base_probs,
        corrector_probs=corr_probs,
    )


def compose_batch(
    model: StagedModel,
    ensemble: CorrectorEnsemble,
    policy: DecisionPolicy,
    data: LabeledDataset,
) -> list[CorrectedPrediction]:
    """Corrected predictions for every sample, in dataset order."""
    _, base_probs = predict_batch(model, data)
    latents = extract_latents(model, data)
    corr_probs = ensemble.predict_proba(latents)
    return [
        _decide(base_probs[i], corr_probs[i], policy) for i in range(len(data))
    ]


@dataclass(frozen=True)
class PredictionLog:
    """Columnar view of a prediction log file."""

    true_labels: np.ndarray
    base_labels: np.ndarray
    corrected_labels: np.ndarray
    overridden: np.ndarray
    base_conf: np.ndarray
    corr_conf: np.ndarray
    n_classes: int


def write_prediction_log(
    preds: Sequence[CorrectedPrediction],
    true_labels: np.ndarray | Sequence[int],
    n_classes: int,
    path: str | Path,
) -> None:
    """CSV log with 0-based label ids (NEW_CLASS as -1)."""
    true_arr = np.asarray(true_labels, dtype=np.int64)
    if true_arr.shape != (len(preds),):
        raise ValueError("true labels must align with predictions")
    lines = [f"# {PREDS_MAGIC} K={n_classes}",
             "sample_id,true,base,corrected,overridden,base_conf,corr_conf"]
    for i, p in enumerate(preds):
        lines.append(
            f"{i},{int(true_arr[i])},{p.base_label},{p.corrected_label},"
            f"{int(p.overridden)},{p.base_probs.max():.6f},{p.corrector_probs.max():.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_prediction_log(path: str | Path, n_classes: int | None = None) -> PredictionLog:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines:
        raise ValueError(f"empty prediction log: {path}")
    start = 0
    k = n_classes
    if lines[0].startswith("#"):
        head = lines[0].lstrip("# ").strip()
        if not head.startswith(PREDS_MAGIC):
            raise ValueError(f"unrecognized prediction log header: {lines[0]!r}")
        if k is None:
            k = int(head.rsplit("K=", 1)[1])
        start = 1
    if lines[start] != "sample_id,true,base,corrected,overridden,base_conf,corr_conf":
        raise ValueError("prediction log missing column header")
    rows = [line.split(",") for line in lines[start + 1 :] if line.strip()]
    cols = list(zip(*rows)) if rows else [[]] * 7
    true_arr = np.asarray([int(v) for v in cols[1]], dtype=np.int64)
    base = np.asarray([int(v) for v in cols[2]], dtype=np.int64)
    corrected = np.asarray([int(v) for v in cols[3]], dtype=np.int64)
    overridden = np.asarray([int(v) for v in cols[4]], dtype=bool)
    base_conf = np.asarray([float(v) for v in cols[5]])
    corr_conf = np.asarray([float(v) for v in cols[6]])
    if k is None:
        k = int(max(true_arr.max(initial=0), base.max(initial=0), corrected.max(initial=0))) + 1
    return PredictionLog(true_arr, base, corrected, overridden, base_conf, corr_conf, int(k))
