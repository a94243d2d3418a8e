"""Three-stage corpus registration: fit, resample landmarks, refit with landmarks."""

import logging
import os
from dataclasses import dataclass, field, replace

from .data_terms import build_index
from .errors import ConfigError, DensAdaptError
from .landmarks import (
    DEFAULT_ANCHOR_INDEX,
    DEFAULT_ANCHOR_WEIGHT,
    LandmarkSet,
    anchor_weights,
    read_landmarks,
    resample_landmarks,
    write_landmarks,
)
from .objio import load_obj, save_obj
from .optimizer import FitConfig, fit, write_metrics_csv

logger = logging.getLogger(__name__)


class StageError(DensAdaptError):
    """A registration stage failed for one corpus member."""

    def __init__(self, stage, target, cause):
        self.stage = stage
        self.target = target
        self.cause = cause
        super().__init__(f"stage {stage} failed on {target}: {cause}")


@dataclass
class RegistrationResult:
    stage1: list
    template_landmarks: object = None
    stage3: list = field(default_factory=list)
    outputs: list = field(default_factory=list)


def load_corpus(entries):
    """Load targets and their landmarks; all landmark sets must have the same size."""
    corpus = []
    for target_path, lmk_path, fitted_path in entries:
        target = load_obj(target_path)
        lms = read_landmarks(lmk_path, mesh=target)
        corpus.append((target_path, target, lms, fitted_path))
    counts = {len(c[2]) for c in corpus}
    if len(counts) > 1:
        expected = len(corpus[0][2])
        bad = next(c for c in corpus if len(c[2]) != expected)
        raise ConfigError(
            f"landmark file for {bad[0]} has {len(bad[2])} landmarks; "
            f"{corpus[0][0]} has {expected}"
        )
    return corpus


def _stage_fit(stage, name, template, target, cfg, **kw):
    try:
        return fit(template, target, cfg, index=build_index(target, workers=cfg.threads), **kw)
    except DensAdaptError as exc:
        raise StageError(stage, name, exc) from exc


def register_corpus(template, corpus, cfg=None, out_dir=None, skip_landmarks=False,
                    anchor=DEFAULT_ANCHOR_INDEX, anchor_weight=DEFAULT_ANCHOR_WEIGHT,
                    landmark_weight=None):
    """Run the registration pipeline on a loaded corpus.

    Parameters
    ----------
    template : TriMesh
        Undeformed template; every output shares its faces.
    corpus : list
        Output of :func:`load_corpus`. The first entry is the landmark
        alignment reference.
    cfg : FitConfig
        Settings for both fitting stages; ``use_landmarks`` is set per stage.
    out_dir : str, optional
        When given, intermediate meshes, metrics and the resampled landmark
        file are written here. Final meshes go to the corpus fitted paths.
    skip_landmarks : bool
        Stop after stage 1 and write its meshes as the final outputs.
    """
    cfg = FitConfig() if cfg is None else cfg
    if not corpus:
        raise ConfigError("corpus is empty")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    stage1_cfg = replace(cfg, use_landmarks=False)
    stage1 = []
    for name, target, _, fitted_path in corpus:
        logger.info("stage 1: fitting %s", name)
        res = _stage_fit(1, name, template, target, stage1_cfg)
        stage1.append(res)
        _write(res, out_dir, "stage1", name)
    result = RegistrationResult(stage1)
    if skip_landmarks:
        for (name, _, _, fitted_path), res in zip(corpus, stage1):
            _save(res.mesh, fitted_path)
            result.outputs.append(fitted_path)
        return result

    b = len(corpus[0][2])
    weights = anchor_weights(b, anchor, anchor_weight)
    try:
        resampled = resample_landmarks(template, [(r.mesh, c[2]) for r, c in zip(stage1, corpus)], weights)
    except DensAdaptError as exc:
        raise StageError(2, corpus[0][0], exc) from exc
    result.template_landmarks = resampled
    if out_dir:
        header = {
            "reference fitting": corpus[0][0],
            "input order": " ".join(os.path.basename(c[0]) for c in corpus),
            "anchor index": anchor,
            "anchor weight": anchor_weight,
        }
        write_landmarks(
            os.path.join(out_dir, "template_landmarks.txt"),
            LandmarkSet(resampled.positions, indices=resampled.indices),
            header=header,
        )

    stage3_cfg = replace(cfg, use_landmarks=True)
    if landmark_weight is not None:
        stage3_cfg = replace(stage3_cfg, landmark_weight=landmark_weight)
    for name, target, lms, fitted_path in corpus:
        logger.info("stage 3: fitting %s with landmarks", name)
        res = _stage_fit(3, name, template, target, stage3_cfg,
                         template_landmarks=resampled.indices, target_landmarks=lms.points)
        result.stage3.append(res)
        _write(res, out_dir, "stage3", name)
        _save(res.mesh, fitted_path)
        result.outputs.append(fitted_path)
    return result


def _stem(name):
    return os.path.splitext(os.path.basename(name))[0]


def _save(mesh, path):
    if path:
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        save_obj(mesh, path)


def _write(res, out_dir, stage, name):
    if not out_dir:
        return
    stem = _stem(name)
    save_obj(res.mesh, os.path.join(out_dir, f"{stage}_{stem}.obj"))
    write_metrics_csv(res.trace, os.path.join(out_dir, f"{stage}_{stem}_metrics.csv"))


def landmark_loss_drop(result):
    """Per-target ratio of final to initial stage-3 landmark loss."""
    return [r.trace[-1]["E_lmk"] / r.trace[0]["E_lmk"] for r in result.stage3]


def corpus_from_synthetic(out_dir, seeds=(0, 1), subdivisions=4):
    """Write face_blob targets and landmark files plus a manifest; returns the manifest path."""
    from .synthetic import face_blob

    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for s in seeds:
        mesh, lms = face_blob(seed=s, subdivisions=subdivisions)
        save_obj(mesh, os.path.join(out_dir, f"face{s}.obj"))
        write_landmarks(os.path.join(out_dir, f"face{s}_lmk.txt"), lms, header={"seed": s})
        lines.append(f"face{s}.obj face{s}_lmk.txt fitted/face{s}.obj\n")
    path = os.path.join(out_dir, "manifest.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(lines)
    return path


__all__ = [
    "RegistrationResult", "StageError", "load_corpus", "register_corpus",
    "landmark_loss_drop", "corpus_from_synthetic",
]
