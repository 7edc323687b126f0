"""Evaluation of finished samples against scribbles and target templates.

Scribble Ratio measures how much of a scribble the generated object covers:
|S intersect M| / |S|. mIoU compares decoded class masks against the target
template's class masks. Orientation error is the axis-wrapped angular
difference in degrees, in [0, 90].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .moments import moment_summary
from .scribble import ScribbleSet

__all__ = [
    "EvalReport",
    "scribble_ratio",
    "miou",
    "orientation_error",
    "evaluate_sample",
    "infer_target_index",
    "report_to_dict",
    "report_from_dict",
]

REPORT_KEYS = ("scribble_ratio", "miou", "orientation_error_deg", "per_scribble")


def scribble_ratio(scribble_mask: np.ndarray, object_mask: np.ndarray) -> float:
    """Fraction of scribble cells covered by the object mask."""
    s = np.asarray(scribble_mask, dtype=bool)
    m = np.asarray(object_mask, dtype=bool)
    if s.shape != m.shape:
        raise ValueError(f"mask shapes differ: {s.shape} vs {m.shape}")
    n_s = int(s.sum())
    if n_s == 0:
        raise ValueError("scribble mask is empty")
    return float((s & m).sum()) / n_s


def miou(pred_mask: np.ndarray, target_mask: np.ndarray) -> float:
    """Intersection over union of two binary masks; two empty masks match (1)."""
    p = np.asarray(pred_mask, dtype=bool)
    t = np.asarray(target_mask, dtype=bool)
    if p.shape != t.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {t.shape}")
    union = int((p | t).sum())
    if union == 0:
        return 1.0
    return float((p & t).sum()) / union


def orientation_error(theta_a: float, theta_b: float) -> float:
    """Axis-wrapped |theta_a - theta_b| in degrees, in [0, 90]."""
    d = math.fmod(theta_a - theta_b, math.pi)
    d = abs(d)
    d = min(d, math.pi - d)
    return math.degrees(d)


@dataclass(frozen=True)
class EvalReport:
    scribble_ratio: float        # pixel-pooled over all scribbles
    miou: float                  # mean IoU over the scribbles' classes
    orientation_error_deg: float  # mean over scribbles
    per_scribble: tuple          # ({"tokens": [...], "ratio": .., "orientation_error_deg": ..}, ...)


def infer_target_index(world, scribble_set: ScribbleSet) -> int:
    """Template the scribbles were most plausibly drawn from.

    Scores each template by the total soft-mask mass its scribble classes put
    on the scribble cells; ties go to the smaller index.
    """
    scores = np.zeros(world.n_templates())
    for s in scribble_set.scribbles:
        cells = s.mask.ravel()
        for tok in s.tokens:
            if tok not in world.class_masks:
                raise ValueError(f"scribble token {tok!r} not in world vocabulary")
            scores += world.class_masks[tok] @ cells.astype(np.float64)
    return int(np.argmax(scores))


def evaluate_sample(world, scribble_set: ScribbleSet, decode, target_index: int) -> EvalReport:
    """Build the evaluation report for one decoded sample.

    decode is a toyworld.DecodeResult; target_index names the ground-truth
    template. Per-scribble orientation error compares the scribble's own
    principal axis against the decoded placement of its first token's class;
    an isotropic scribble claims no orientation (error 0), and a class the
    decoded template does not contain counts as maximally misaligned (90).
    """
    target = world.templates[target_index]
    inter = 0
    total = 0
    per_scribble = []
    classes_seen = {}
    for s in scribble_set.scribbles:
        cls = s.tokens[0]
        for tok in s.tokens:
            classes_seen.setdefault(tok, None)
        obj = decode.masks[cls]
        n_s = int(s.mask.sum())
        n_i = int((s.mask & obj).sum())
        inter += n_i
        total += n_s
        ssum = moment_summary(s.mask.astype(np.float64))
        if ssum.isotropic:
            err = 0.0
        elif cls in decode.thetas:
            err = orientation_error(ssum.theta, decode.thetas[cls])
        else:
            err = 90.0
        per_scribble.append(
            {
                "tokens": list(s.tokens),
                "ratio": (n_i / n_s) if n_s else 0.0,
                "orientation_error_deg": err,
            }
        )
    if total == 0:
        raise ValueError("all scribble masks are empty")
    ious = []
    for cls in classes_seen:
        if cls in target.soft_masks:
            target_mask = target.soft_masks[cls] >= 0.5
        else:
            target_mask = np.zeros_like(decode.masks[cls])
        ious.append(miou(decode.masks[cls], target_mask))
    return EvalReport(
        scribble_ratio=inter / total,
        miou=float(np.mean(ious)),
        orientation_error_deg=float(
            np.mean([p["orientation_error_deg"] for p in per_scribble])
        ),
        per_scribble=tuple(per_scribble),
    )


def report_to_dict(report: EvalReport) -> dict:
    return {
        "scribble_ratio": report.scribble_ratio,
        "miou": report.miou,
        "orientation_error_deg": report.orientation_error_deg,
        "per_scribble": [dict(p) for p in report.per_scribble],
    }


def report_from_dict(data: dict) -> EvalReport:
    """Parse a report dict, rejecting anything that is not the metrics schema."""
    if not isinstance(data, dict):
        raise ValueError("report must be a JSON object")
    missing = [k for k in REPORT_KEYS if k not in data]
    if missing:
        raise ValueError(f"report missing keys {missing}")
    per = data["per_scribble"]
    if not isinstance(per, list):
        raise ValueError("per_scribble must be a list")
    for entry in per:
        if not isinstance(entry, dict) or not {
            "tokens",
            "ratio",
            "orientation_error_deg",
        } <= set(entry):
            raise ValueError("per_scribble entries must carry tokens/ratio/orientation_error_deg")
    return EvalReport(
        scribble_ratio=float(data["scribble_ratio"]),
        miou=float(data["miou"]),
        orientation_error_deg=float(data["orientation_error_deg"]),
        per_scribble=tuple(dict(p) for p in per),
    )
