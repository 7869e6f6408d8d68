"""Readers and writers: KITTI labels, detection and prediction tables, model
bundles, and the chronological split of image sequences.

Detections and predictions are comma-separated text with a header row.
Floats are written with ``repr`` so every value re-parses to the same double.
"""

from __future__ import annotations

import csv
import json
import math
import os
import shutil
import tempfile
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .density import BANDWIDTH_RULE, Kde, PairModel, RelationalModel, StatePriors, UniformDensity
from .errors import BundleError, DataError, ParseError
from .fusion import LinearFusionModel, ProbFusionModel
from .localclf import ScoreModel
from .relations import RelationFormat
from .scene import STATES, BBox, ObjectHypothesis, Scene, State, annotation, discretize_viewpoint

ANGLE_FIELDS = {"alpha": 3, "rot_y": 14}
KITTI_FIELDS = 15
DETECTION_COLUMNS = ("image_id", "category", "cx", "cy", "w", "h", "score", "bin", "angle", "bin_scores")
PREDICTION_COLUMNS = ("image_id", "index", "category", "cx", "cy", "w", "h", "score",
                      "local_bin", "predicted_bin", "context_defined", "coupled")
BUNDLE_VERSION = 1
MANIFEST = "manifest.json"


# -- KITTI labels -----------------------------------------------------------

def _angle_index(angle_field):
    try:
        return ANGLE_FIELDS[angle_field]
    except KeyError:
        raise ValueError(f"unknown angle field {angle_field!r}; expected alpha or rot_y") from None


def parse_kitti_labels(path, K=8, angle_field="alpha", categories=None):
    """Annotations of one KITTI label file.

    Each line holds type, truncated, occluded, alpha, the 2D box corners
    (left, top, right, bottom), 3D dimensions, 3D location and rotation_y; a
    sixteenth score column is tolerated.  ``DontCare`` lines and categories
    outside ``categories`` (when given) are skipped.
    """
    col = _angle_index(angle_field)
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) not in (KITTI_FIELDS, KITTI_FIELDS + 1):
                raise ParseError(path, lineno, f"expected {KITTI_FIELDS} fields, got {len(fields)}")
            kind = fields[0]
            if kind == "DontCare" or (categories is not None and kind not in categories):
                continue
            try:
                values = [float(v) for v in fields[1:]]
            except ValueError as exc:
                raise ParseError(path, lineno, f"unparsable number ({exc})") from None
            if not all(math.isfinite(v) for v in values):
                raise ParseError(path, lineno, "non-finite number")
            left, top, right, bottom = values[3:7]
            try:
                box = BBox.from_corners(left, top, right, bottom)
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            out.append(annotation(kind, box, discretize_viewpoint(values[col - 1], K).index))
    return out


def _wrapped_center(index, K):
    theta = 2.0 * math.pi * index / K
    return theta - 2.0 * math.pi if theta > math.pi else theta


def format_kitti_line(obj, K):
    """One label line; both angle fields carry the bin center in (-pi, pi]."""
    angle = _wrapped_center(obj.viewpoint, K)
    left, top, right, bottom = obj.box.corners()
    numbers = [0.0, 0, angle, left, top, right, bottom, -1.0, -1.0, -1.0, -1000.0, -1000.0, -1000.0, angle]
    return " ".join([obj.category] + [repr(v) for v in numbers])


def write_kitti_labels(path, objects, K=8):
    with open(path, "w") as fh:
        for obj in objects:
            fh.write(format_kitti_line(obj, K) + "\n")


def read_label_dir(directory, K=8, angle_field="alpha", categories=None):
    """``{image_id: annotations}`` for every ``*.txt`` file, ordered by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"label directory not found: {directory}")
    return OrderedDict(
        (p.stem, parse_kitti_labels(p, K, angle_field, categories))
        for p in sorted(directory.glob("*.txt"))
    )


# -- detections -------------------------------------------------------------

@dataclass(frozen=True)
class DetectionRecord:
    image_id: str
    category: str
    box: BBox
    score: float
    bin: Optional[int] = None
    angle: Optional[float] = None
    bin_scores: Optional[tuple] = None

    def __post_init__(self):
        if (self.bin is None) == (self.angle is None):
            raise ValueError("a detection carries exactly one of bin and angle")

    def to_hypothesis(self, K):
        vp = self.bin if self.bin is not None else discretize_viewpoint(self.angle, K).index
        return ObjectHypothesis(self.category, self.box, self.score, vp, bin_scores=self.bin_scores)


def _check_header(reader, path, expected):
    header = next(reader, None)
    if header is None:
        return False
    if tuple(header) != expected:
        raise ParseError(path, 1, f"header must be {','.join(expected)}")
    return True


def _float(text, path, lineno, name):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(path, lineno, f"{name}: unparsable number {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(path, lineno, f"{name}: non-finite value")
    return value


def _int(text, path, lineno, name):
    try:
        return int(text)
    except ValueError:
        raise ParseError(path, lineno, f"{name}: not an integer: {text!r}") from None


def read_detection_records(path, K=8):
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if not _check_header(reader, path, DETECTION_COLUMNS):
            return records
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != len(DETECTION_COLUMNS):
                raise ParseError(path, lineno, f"expected {len(DETECTION_COLUMNS)} fields, got {len(row)}")
            image_id, category = row[0], row[1]
            if not image_id or not category:
                raise ParseError(path, lineno, "empty image_id or category")
            cx, cy, w, h, score = (_float(row[k], path, lineno, DETECTION_COLUMNS[k]) for k in range(2, 7))
            has_bin, has_angle = bool(row[7]), bool(row[8])
            if has_bin == has_angle:
                raise ParseError(path, lineno, "exactly one of bin and angle must be given")
            b = angle = None
            if has_bin:
                b = _int(row[7], path, lineno, "bin")
                if not 0 <= b < K:
                    raise ParseError(path, lineno, f"bin {b} outside [0, {K})")
            else:
                angle = _float(row[8], path, lineno, "angle")
            bin_scores = None
            if row[9]:
                bin_scores = tuple(_float(v, path, lineno, "bin_scores") for v in row[9].split())
                if len(bin_scores) != K:
                    raise ParseError(path, lineno, f"expected {K} bin scores, got {len(bin_scores)}")
            try:
                box = BBox(cx, cy, w, h)
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            records.append(DetectionRecord(image_id, category, box, score, b, angle, bin_scores))
    return records


def parse_detections(path, K=8):
    """``{image_id: hypotheses}`` in file order."""
    grouped = OrderedDict()
    for rec in read_detection_records(path, K):
        grouped.setdefault(rec.image_id, []).append(rec.to_hypothesis(K))
    return grouped


def write_detections(path, scenes):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DETECTION_COLUMNS)
        for scene in scenes:
            for h in scene.hypotheses:
                scores = "" if h.bin_scores is None else " ".join(repr(float(v)) for v in h.bin_scores)
                writer.writerow([scene.image_id, h.category, repr(h.box.cx), repr(h.box.cy),
                                 repr(h.box.w), repr(h.box.h), repr(h.score), h.viewpoint, "", scores])


# -- datasets ---------------------------------------------------------------

def write_dataset(directory, scenes, K=8):
    """``labels/<image_id>.txt`` per scene plus one ``detections.csv``."""
    directory = Path(directory)
    (directory / "labels").mkdir(parents=True, exist_ok=True)
    for scene in scenes:
        write_kitti_labels(directory / "labels" / f"{scene.image_id}.txt", scene.annotations, K)
    write_detections(directory / "detections.csv", scenes)


def load_dataset(directory, K=8, angle_field="alpha", categories=None, detections=None):
    """Scenes from a directory written by :func:`write_dataset`.

    Every detection must refer to an image that has a label file.
    """
    directory = Path(directory)
    labels = read_label_dir(directory / "labels", K, angle_field, categories)
    det_path = Path(detections) if detections is not None else directory / "detections.csv"
    if not det_path.is_file():
        raise DataError(f"detections file not found: {det_path}")
    hyps = parse_detections(det_path, K)
    unknown = sorted(set(hyps) - set(labels))
    if unknown:
        raise DataError(f"{det_path}: detections for images without labels: {unknown[:5]}")
    scenes = []
    for image_id, anns in labels.items():
        hs = [h for h in hyps.get(image_id, []) if categories is None or h.category in categories]
        scenes.append(Scene(image_id, tuple(hs), tuple(anns)))
    return scenes


# -- predictions ------------------------------------------------------------

@dataclass(frozen=True)
class PredictionRecord:
    image_id: str
    index: int
    category: str
    box: BBox
    score: float
    local_bin: int
    predicted_bin: int
    context_defined: bool
    coupled: tuple = field(default=())

    def to_hypothesis(self):
        return ObjectHypothesis(self.category, self.box, self.score, self.predicted_bin)


def write_predictions(path, records):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PREDICTION_COLUMNS)
        for r in records:
            writer.writerow([r.image_id, r.index, r.category, repr(r.box.cx), repr(r.box.cy),
                             repr(r.box.w), repr(r.box.h), repr(r.score), r.local_bin,
                             r.predicted_bin, int(r.context_defined),
                             " ".join(repr(float(v)) for v in r.coupled)])


def read_predictions(path):
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if not _check_header(reader, path, PREDICTION_COLUMNS):
            return records
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != len(PREDICTION_COLUMNS):
                raise ParseError(path, lineno, f"expected {len(PREDICTION_COLUMNS)} fields, got {len(row)}")
            cx, cy, w, h, score = (_float(row[k], path, lineno, PREDICTION_COLUMNS[k]) for k in range(3, 8))
            local_bin, pred_bin, defined = (_int(row[k], path, lineno, PREDICTION_COLUMNS[k]) for k in (8, 9, 10))
            if min(local_bin, pred_bin) < 0:
                raise ParseError(path, lineno, "negative viewpoint bin")
            coupled = tuple(_float(v, path, lineno, "coupled") for v in row[11].split())
            try:
                box = BBox(cx, cy, w, h)
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            records.append(PredictionRecord(row[0], _int(row[1], path, lineno, "index"), row[2], box,
                                            score, local_bin, pred_bin, bool(defined), coupled))
    return records


# -- chronological split ----------------------------------------------------

def sequence_key(image_id):
    """(sequence id, frame) from ``SEQUENCE_FRAME`` style ids.

    Ids without an underscore form their own single-frame sequence.
    """
    seq, sep, frame = image_id.rpartition("_")
    if not sep:
        return image_id, (0, "")
    return seq, (0, int(frame)) if frame.isdigit() else (1, frame)


def chronological_split(scenes, fractions=(1 / 3, 1 / 3, 1 / 3)):
    """Split every sequence in time order into three consecutive parts.

    Within a sequence of n frames the first ``round(n * f0)`` frames go to the
    first part and frames up to ``round(n * (f0 + f1))`` to the second.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be three nonnegative numbers summing to 1, got {fractions}")
    sequences = OrderedDict()
    for scene in scenes:
        seq, frame = sequence_key(scene.image_id)
        sequences.setdefault(seq, []).append((frame, scene))
    parts = ([], [], [])
    for seq in sorted(sequences):
        frames = [s for _, s in sorted(sequences[seq], key=lambda t: t[0])]
        n = len(frames)
        a = int(round(n * fractions[0]))
        b = max(a, int(round(n * (fractions[0] + fractions[1]))))
        parts[0].extend(frames[:a])
        parts[1].extend(frames[a:b])
        parts[2].extend(frames[b:])
    return parts


# -- model bundles ----------------------------------------------------------

@dataclass(eq=False)
class ModelBundle:
    relational: RelationalModel
    scores: ScoreModel
    fusion: object = None        # ProbFusionModel, LinearFusionModel or None
    settings: dict = field(default_factory=dict)

    @property
    def K(self):
        return self.relational.K


# choices the saved models depend on, recorded for whoever reads the bundle
BUNDLE_FLAGS = {
    "vote_states": "true at candidate bin / true at another bin / false, source-bin indexed",
    "relation_pool": "all ordered pairs after annotation substitution",
    "bin_prior": "add-one smoothed source viewpoint frequencies",
    "sparse_cell_density": "uniform over padded pair feature box",
    "avp_duplicates": "bin-incorrect match is a false positive that claims its annotation",
    "score_calibration": "raw detector scores",
}


class _Writer:
    def __init__(self, root):
        self.root = Path(root)
        self.n = 0

    def density(self, d):
        if d is None:
            return None
        if isinstance(d, UniformDensity):
            return {"kind": "uniform", "low": [float(v) for v in d.low], "high": [float(v) for v in d.high]}
        if isinstance(d, Kde):
            name = f"tables/kde_{self.n:05d}.tsv"
            self.n += 1
            rows = np.vstack([d.bandwidth[None, :], d.samples])
            np.savetxt(self.root / name, rows, fmt="%.17g", delimiter="\t")
            entry = {"kind": "kde", "table": name}
            if d.weights is not None:
                entry["weights"] = [float(v) for v in d.weights]
            return entry
        raise TypeError(f"cannot store density of type {type(d).__name__}")


class _Reader:
    def __init__(self, root):
        self.root = Path(root)

    def density(self, entry):
        if entry is None:
            return None
        kind = entry.get("kind")
        if kind == "uniform":
            return UniformDensity(np.array(entry["low"], dtype=float), np.array(entry["high"], dtype=float))
        if kind == "kde":
            path = self.root / entry["table"]
            if not path.is_file():
                raise BundleError(f"missing density table {entry['table']}")
            try:
                rows = np.loadtxt(path, delimiter="\t", ndmin=2)
            except ValueError as exc:
                raise BundleError(f"corrupt density table {entry['table']}: {exc}") from None
            if rows.shape[0] < 2:
                raise BundleError(f"density table {entry['table']} has no samples")
            return Kde(rows[1:], rows[0], entry.get("weights"))
        raise BundleError(f"unknown density kind {kind!r}")


def _state_key(state, b):
    return {"state": state.name, "bin": b}


def _dump_relational(model, w):
    pairs = []
    for (src, tgt), pm in sorted(model.pairs.items()):
        cells = []
        for (state, b), count in pm.counts.items():
            entry = _state_key(state, b)
            entry["count"] = int(count)
            entry["density"] = w.density(pm.cells.get((state, b)))
            cells.append(entry)
        pairs.append({"source": src, "target": tgt, "fallback": w.density(pm.fallback), "cells": cells})
    return {
        "pairs": pairs,
        "priors": {c: list(p.as_tuple()) for c, p in sorted(model.priors.items())},
        "bin_counts": {c: [float(v) for v in model.bin_counts[c]] for c in sorted(model.bin_counts)},
        "notes": dict(model.notes),
    }


def _load_relational(data, fmt, K, min_samples, r):
    pairs = {}
    for p in data["pairs"]:
        cells, counts = {}, {}
        for c in p["cells"]:
            key = (State[c["state"]], c["bin"])
            counts[key] = c["count"]
            density = r.density(c["density"])
            if density is not None:
                cells[key] = density
            elif c["count"] >= min_samples:
                raise BundleError(f"cell {p['source']}->{p['target']} {c['state']}/{c['bin']} has no density")
        pairs[(p["source"], p["target"])] = PairModel(cells, counts, r.density(p["fallback"]))
    priors = {c: StatePriors(*v) for c, v in data["priors"].items()}
    bin_counts = {c: np.array(v, dtype=float) for c, v in data["bin_counts"].items()}
    for src in priors:
        for tgt in priors:
            if (src, tgt) not in pairs:
                raise BundleError(f"bundle lacks the category pair {src}->{tgt}")
    return RelationalModel(fmt, K, pairs, priors, bin_counts, min_samples, data.get("notes", {}))


def _dump_fusion(model, w):
    if model is None:
        return None
    if isinstance(model, ProbFusionModel):
        return {"kind": "prob", "priors": [float(v) for v in model.priors],
                "densities": [w.density(d) for d in model.densities]}
    if isinstance(model, LinearFusionModel):
        acc = sorted((model.cv_accuracy or {}).items())
        return {"kind": "linear", "W": model.W.tolist(), "bias": model.bias.tolist(), "C": model.C,
                "cv_accuracy": [[float(c), float(a)] for c, a in acc]}
    raise TypeError(f"cannot store fusion model of type {type(model).__name__}")


def _load_fusion(data, r):
    if data is None:
        return None
    if data["kind"] == "prob":
        return ProbFusionModel([r.density(d) for d in data["densities"]], np.array(data["priors"]))
    if data["kind"] == "linear":
        return LinearFusionModel(np.array(data["W"], dtype=float), np.array(data["bias"], dtype=float),
                                 data["C"], {c: a for c, a in data["cv_accuracy"]})
    raise BundleError(f"unknown fusion kind {data['kind']!r}")


def save_model(path, bundle: ModelBundle):
    """Write ``bundle`` as a directory: a JSON manifest plus density tables.

    The directory is assembled next to ``path`` and renamed into place.
    """
    path = Path(path)
    parent = path.parent if str(path.parent) else Path(".")
    parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=parent))
    try:
        (tmp / "tables").mkdir()
        w = _Writer(tmp)
        rel, sm = bundle.relational, bundle.scores
        manifest = {
            "version": BUNDLE_VERSION,
            "format": rel.fmt.name,
            "K": rel.K,
            "categories": rel.categories,
            "angle_field": bundle.settings.get("angle_field", "alpha"),
            "min_samples": rel.min_samples,
            "bandwidth_rule": BANDWIDTH_RULE,
            "settings": dict(sorted(bundle.settings.items())),
            "flags": BUNDLE_FLAGS,
            "relational": _dump_relational(rel, w),
            "score_model": {
                "min_samples": sm.min_samples,
                "priors": {c: list(p.as_tuple()) for c, p in sorted(sm.priors.items())},
                "densities": {c: {s.name: w.density(sm.densities[c][s]) for s in STATES}
                              for c in sorted(sm.densities)},
            },
            "fusion_model": _dump_fusion(bundle.fusion, w),
        }
        with open(tmp / MANIFEST, "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
            fh.write("\n")
        if path.exists():
            shutil.rmtree(path)
        os.rename(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def load_model(path, K=None) -> ModelBundle:
    """Read a bundle written by :func:`save_model`.

    Raises :class:`BundleError` for a missing or empty directory, a manifest
    of another version, a K different from ``K`` (when given) and missing
    density tables.
    """
    path = Path(path)
    if not path.is_dir():
        raise BundleError(f"bundle directory not found: {path}")
    manifest_path = path / MANIFEST
    if not manifest_path.is_file():
        raise BundleError(f"{path} holds no bundle manifest")
    try:
        with open(manifest_path) as fh:
            m = json.load(fh)
    except json.JSONDecodeError as exc:
        raise BundleError(f"unreadable manifest: {exc}") from None
    if m.get("version") != BUNDLE_VERSION:
        raise BundleError(f"bundle version {m.get('version')!r} is not supported (expected {BUNDLE_VERSION})")
    if K is not None and m["K"] != K:
        raise BundleError(f"bundle was trained with K={m['K']}, configuration asks for K={K}")
    try:
        r = _Reader(path)
        fmt = RelationFormat[m["format"]]
        rel = _load_relational(m["relational"], fmt, m["K"], m["min_samples"], r)
        sd = m["score_model"]
        scores = ScoreModel(
            {c: {State[s]: r.density(d) for s, d in by_state.items()} for c, by_state in sd["densities"].items()},
            {c: StatePriors(*v) for c, v in sd["priors"].items()},
            sd["min_samples"],
        )
        fusion = _load_fusion(m.get("fusion_model"), r)
    except KeyError as exc:
        raise BundleError(f"manifest lacks the entry {exc}") from None
    return ModelBundle(rel, scores, fusion, dict(m.get("settings", {})))
