"""End-to-end pipeline: fit the context models, predict viewpoints, report.

In oracle mode the annotations (true boxes, true bins, score 1) replace the
detector hypotheses as both the objects to classify and their context, and
every neighbor gets weight 1.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .density import MIN_SAMPLES, fit_relational_model
from .errors import ConfigError, DataError, NumericalError
from .fusion import (build_coupled_response, fit_prob_fusion, predict_linear, predict_prob,
                     train_linear_fusion)
from .io import ModelBundle, PredictionRecord
from .localclf import fit_score_model
from .metrics import evaluate
from .relations import RelationFormat
from .relclf import vote_tensor, wvrn_aggressive, wvrn_cautious
from .scene import Scene, match_indices

MODES = ("aggressive", "cautious")
FUSIONS = ("none", "prob", "linear")
REPORT_VERSION = 1


@dataclass(frozen=True)
class RunConfig:
    fmt: RelationFormat = RelationFormat.RF1
    mode: str = "aggressive"
    fusion: str = "none"
    K: int = 8
    iou_threshold: float = 0.5
    angle_field: str = "alpha"
    fractions: tuple = (1 / 3, 1 / 3, 1 / 3)
    seed: int = 0
    oracle: bool = False
    workers: int = 1
    min_samples: int = MIN_SAMPLES

    def __post_init__(self):
        if isinstance(self.fmt, str):
            try:
                object.__setattr__(self, "fmt", RelationFormat.parse(self.fmt))
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if self.mode not in MODES:
            raise ConfigError(f"unknown inference mode {self.mode!r}; expected one of {MODES}")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"unknown fusion {self.fusion!r}; expected one of {FUSIONS}")
        if self.K < 2:
            raise ConfigError(f"need at least 2 viewpoint bins, got K={self.K}")
        if not 0 < self.iou_threshold <= 1:
            raise ConfigError(f"IoU threshold must lie in (0, 1], got {self.iou_threshold}")
        if self.angle_field not in ("alpha", "rot_y"):
            raise ConfigError(f"unknown angle field {self.angle_field!r}; expected alpha or rot_y")
        fr = tuple(float(f) for f in self.fractions)
        if len(fr) != 3 or min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be three nonnegative numbers summing to 1, got {fr}")
        object.__setattr__(self, "fractions", fr)
        if self.workers < 1:
            raise ConfigError(f"worker count must be positive, got {self.workers}")
        if self.min_samples < 1:
            raise ConfigError(f"min_samples must be positive, got {self.min_samples}")

    def settings(self):
        return {"format": self.fmt.name, "mode": self.mode, "fusion": self.fusion, "K": self.K,
                "iou_threshold": self.iou_threshold, "angle_field": self.angle_field,
                "oracle": self.oracle, "seed": self.seed, "min_samples": self.min_samples}


def targets_of(scene, oracle):
    return list(scene.annotations if oracle else scene.hypotheses)


def contextual_for_scene(scene, relational, scores, mode, oracle=False):
    """Objects of ``scene`` and their contextual responses."""
    objects = targets_of(scene, oracle)
    V = vote_tensor(relational, objects)
    kw = {"weights": np.ones(len(objects))} if oracle else {"scores": scores}
    if mode == "aggressive":
        responses = wvrn_aggressive(objects, relational, V=V, **kw)
    elif mode == "cautious":
        responses = wvrn_cautious(objects, relational, V=V, **kw)[0]
    else:
        raise ConfigError(f"unknown inference mode {mode!r}")
    return objects, responses


def true_bins_of(scene, objects, oracle, iou_threshold):
    """True bin per object, None for unmatched hypotheses."""
    if oracle:
        return [o.viewpoint for o in objects]
    idx = match_indices(objects, scene.annotations, iou_threshold)
    return [None if a is None else scene.annotations[a].viewpoint for a in idx]


def contextual_pairs(scenes, relational, scores, mode, oracle=False, iou_threshold=0.5):
    """(true bin, contextual argmax) over every object with a true bin."""
    pairs = []
    for scene in scenes:
        objects, responses = contextual_for_scene(scene, relational, scores, mode, oracle)
        for t, r in zip(true_bins_of(scene, objects, oracle, iou_threshold), responses):
            if t is not None:
                pairs.append((t, r.predicted))
    return pairs


def fusion_examples(scenes, relational, scores, config):
    """(coupled response, true bin) for every object with a true bin."""
    out = []
    for scene in scenes:
        objects, responses = contextual_for_scene(scene, relational, scores, config.mode, config.oracle)
        for o, r, t in zip(objects, responses, true_bins_of(scene, objects, config.oracle, config.iou_threshold)):
            if t is not None:
                out.append((_coupled(o, r, config.K), t))
    return out


def _coupled(obj, response, K):
    try:
        return build_coupled_response(obj, response, K)
    except ValueError as exc:
        if "finite" in str(exc):
            raise NumericalError(str(exc)) from None
        raise DataError(str(exc)) from None


def train(train_scenes, val_scenes, config: RunConfig) -> ModelBundle:
    relational = fit_relational_model(train_scenes, config.fmt, config.K,
                                      config.iou_threshold, config.min_samples)
    scores = fit_score_model(train_scenes, config.iou_threshold, config.min_samples)
    fusion = None
    if config.fusion != "none":
        examples = fusion_examples(val_scenes, relational, scores, config)
        if not examples:
            raise DataError("validation split has no matched objects to fit fusion on")
        with np.errstate(over="raise", invalid="raise"):
            try:
                if config.fusion == "prob":
                    fusion = fit_prob_fusion(examples, config.K, config.min_samples)
                else:
                    fusion = train_linear_fusion(examples, config.K, seed=config.seed)
            except FloatingPointError as exc:
                raise NumericalError(f"fusion training failed: {exc}") from None
        if config.fusion == "linear" and not (np.all(np.isfinite(fusion.W)) and np.all(np.isfinite(fusion.bias))):
            raise NumericalError("linear fusion produced non-finite weights")
    settings = config.settings()
    return ModelBundle(relational, scores, fusion, settings)


def predict_scene(scene, bundle: ModelBundle, config: RunConfig):
    objects, responses = contextual_for_scene(scene, bundle.relational, bundle.scores,
                                              config.mode, config.oracle)
    records = []
    for k, (o, r) in enumerate(zip(objects, responses)):
        psi = _coupled(o, r, config.K)
        if config.fusion == "none":
            pred = r.predicted if r.defined else o.viewpoint
        elif bundle.fusion is None:
            raise ConfigError(f"fusion {config.fusion!r} requested but the bundle holds no fusion model")
        elif config.fusion == "prob":
            pred = predict_prob(bundle.fusion, psi)
        else:
            pred = predict_linear(bundle.fusion, psi)
        records.append(PredictionRecord(scene.image_id, k, o.category, o.box, o.score, o.viewpoint,
                                        int(pred), r.defined, tuple(psi.vector.tolist())))
    return records


_worker_state = {}


def _init_worker(bundle, config):
    _worker_state["args"] = (bundle, config)


def _predict_in_worker(scene):
    return predict_scene(scene, *_worker_state["args"])


def infer(scenes, bundle: ModelBundle, config: RunConfig):
    """Prediction records for every object of every scene, in scene order."""
    if bundle.K != config.K:
        raise ConfigError(f"bundle was trained with K={bundle.K}, configuration asks for K={config.K}")
    if config.workers == 1 or len(scenes) < 2:
        per_scene = [predict_scene(s, bundle, config) for s in scenes]
    else:
        with ProcessPoolExecutor(config.workers, initializer=_init_worker, initargs=(bundle, config)) as ex:
            per_scene = list(ex.map(_predict_in_worker, scenes, chunksize=max(1, len(scenes) // (4 * config.workers))))
    return [r for recs in per_scene for r in recs]


def predicted_scenes(label_scenes, records, oracle=False):
    """Label scenes whose hypotheses carry the predicted bins.

    Raises :class:`DataError` when predictions refer to unknown images.
    """
    by_image = {}
    for r in records:
        by_image.setdefault(r.image_id, []).append(r)
    known = {s.image_id for s in label_scenes}
    unknown = sorted(set(by_image) - known)
    if unknown:
        raise DataError(f"predictions for images missing from the labels: {unknown[:5]}")
    out = []
    for s in label_scenes:
        recs = sorted(by_image.get(s.image_id, []), key=lambda r: r.index)
        out.append(Scene(s.image_id, tuple(r.to_hypothesis() for r in recs), s.annotations))
    return out


def build_report(scenes, config: RunConfig, split_threshold=None):
    report = evaluate(scenes, config.K, config.iou_threshold, split_threshold).to_dict()
    report["report_version"] = REPORT_VERSION
    report["settings"] = config.settings()
    return report


def report_json(report):
    return json.dumps(report, indent=1, sort_keys=True) + "\n"


def _fmt(value):
    if value is None:
        return "-"
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.4f}"
    return str(value)


def report_table(report):
    """Fixed-width text rendering of a report dictionary."""
    rows = [("subset", "images", "annots", "matched", "MPPE", "AP", "AVP")]
    subsets = [("all", report)]
    if report.get("split"):
        thr = report["split"]["threshold"]
        subsets += [(f"low (<={thr})", report["split"]["low"]), (f"high (>{thr})", report["split"]["high"])]
    for name, r in subsets:
        rows.append((name, r["n_images"], r["n_annotations"], r["n_matched"], r["mppe"], r["ap"], r["avp"]))
    lines = [f"{str(a):<14}{_fmt(b):>8}{_fmt(c):>8}{_fmt(d):>9}{_fmt(e):>9}{_fmt(f):>9}{_fmt(g):>9}"
             for a, b, c, d, e, f, g in rows]
    lines.append("")
    lines.append("error groups: " + "  ".join(f"{k}={v}" for k, v in report["taxonomy"].items()))
    lines.append("confusion (rows true bin, columns predicted bin):")
    for i, row in enumerate(report["confusion"]):
        lines.append(f"{i:>3} " + "".join(f"{v:>7}" for v in row))
    return "\n".join(lines) + "\n"
