"""Single-image localization and test-set evaluation."""
import json
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from app.config import Settings, settings as default_settings
from app.core.errors import CheckpointError, DatasetError, ShapeError
from app.core.logging import LoggerMixin, get_logger
from app.models.dataset import DatasetManifest
from app.models.localization import InferenceResult, LocalizationRecord, LocMetrics
from app.services import metrics
from app.services.checkpoint import load_checkpoint
from app.services.dataset import load_image
from app.services.imaging import decode_ppm
from app.services.localization import best_iou, extract_box, loc_metrics, upsample_map
from app.services.matching import across_transformer
from app.services.params import ModelParams
from app.services.semantic_maps import (
    conv_head,
    couple,
    gap_logits,
    minmax_normalize,
    select_class,
    tokens_to_featmap,
)
from app.services.tensor import Tensor, as_tensor
from app.services.vit import encode

logger = get_logger("inference")


def class_activation(image: Tensor, params: ModelParams, settings: Settings,
                     dagger: bool = False) -> Tuple[np.ndarray, Tensor]:
    """GAP logits of F' and the coupled maps M_hat of one primal image.

    With ``dagger`` the maps pass through the across-transformer with the
    (primal, primal) pair before coupling; the logits always come from F'.
    """
    encoded = encode(as_tensor(image), params, settings)
    F = tokens_to_featmap(encoded.patch_tokens, settings.grid_h, settings.grid_w)
    F_prime = conv_head(F, params)
    logits = gap_logits(F_prime).numpy()
    activation = F_prime
    if dagger:
        activation, _ = across_transformer(F_prime, F_prime, params, settings, enabled=True)
    return logits, couple(activation, encoded.inner_guided)


def rank_classes(logits: np.ndarray) -> List[int]:
    """Class indices by descending logit; ties keep index order"""
    return [int(k) for k in np.argsort(-np.asarray(logits), kind="stable")]


def run_inference(image: Tensor, params: ModelParams, settings: Settings,
                  dagger: bool = False) -> InferenceResult:
    started = time.perf_counter()
    image = as_tensor(image)
    size = (image.shape[1], image.shape[2])
    logits, M_hat = class_activation(image, params, settings, dagger)
    ranked = rank_classes(logits)
    top_map = select_class(M_hat, ranked[0])
    box = extract_box(top_map, size, settings.box_threshold)
    heatmap = minmax_normalize(Tensor(upsample_map(top_map, size))).numpy()
    metrics.INFERENCE_SECONDS.observe(time.perf_counter() - started)
    return InferenceResult(
        ranked_classes=ranked,
        logits=[float(v) for v in logits],
        box=box,
        heatmap=heatmap,
        class_maps=M_hat.numpy(),
    )


def format_record(record: LocalizationRecord) -> str:
    """``image_id ranked x0 y0 x1 y1 iou gt_known_iou`` with comma-joined ranks"""
    box = record.pred_box
    known = record.gt_known_iou if record.gt_known_iou is not None else record.iou_best
    return (f"{record.image_id} {','.join(str(k) for k in record.ranked_classes)} "
            f"{box.x0} {box.y0} {box.x1} {box.y1} {record.iou_best:.6f} {known:.6f}")


def evaluate(params: ModelParams, manifest: DatasetManifest, settings: Settings,
             out_dir: Optional[Path] = None, dagger: bool = False) -> LocMetrics:
    """Score the ``test`` split; writes ``records.txt`` and ``metrics.json`` under ``out_dir``"""
    entries = manifest.split("test").entries
    if not entries:
        raise DatasetError("evaluate: the manifest has no test entries")

    records: List[LocalizationRecord] = []
    for entry in entries:
        image = Tensor(load_image(manifest, entry, settings.channels))
        result = run_inference(image, params, settings, dagger)
        known_map = select_class(Tensor(result.class_maps), entry.label)
        known_box = extract_box(known_map, (image.shape[1], image.shape[2]), settings.box_threshold)
        records.append(LocalizationRecord(
            image_id=entry.image_id,
            ranked_classes=result.ranked_classes,
            pred_box=result.box,
            gt_class=entry.label,
            gt_boxes=entry.boxes,
            iou_best=best_iou(result.box, entry.boxes),
            gt_known_box=known_box,
            gt_known_iou=best_iou(known_box, entry.boxes),
        ))
        metrics.EVALUATED_IMAGES.inc()

    scores = loc_metrics(records)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "records.txt").write_text(
            "\n".join(format_record(r) for r in records) + "\n", encoding="utf-8")
        (out_dir / "metrics.json").write_text(
            json.dumps(scores.model_dump(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    logger.info("evaluation_finished", **scores.model_dump())
    return scores


class InferenceService(LoggerMixin):
    """Holds a loaded checkpoint for the HTTP surface"""

    def __init__(self, settings: Settings = default_settings):
        self.settings = settings
        self.params: Optional[ModelParams] = None
        self.checkpoint_path: Optional[Path] = None
        self.load_error: Optional[str] = None

    @property
    def default_checkpoint(self) -> Path:
        return Path(self.settings.checkpoint_path or self.settings.run_dir / "model.ckpt")

    @property
    def is_loaded(self) -> bool:
        return self.params is not None

    def load(self, path: Optional[Path] = None) -> ModelParams:
        path = Path(path or self.default_checkpoint)
        try:
            self.params = load_checkpoint(path, self.settings)
        except CheckpointError as e:
            self.load_error = str(e)
            self.logger.error("checkpoint_load_failed", path=str(path), error=str(e))
            raise
        self.checkpoint_path = path
        self.load_error = None
        self.logger.info("checkpoint_loaded", path=str(path), parameters=self.params.num_values())
        return self.params

    def ensure_loaded(self) -> ModelParams:
        if self.params is None:
            return self.load()
        return self.params

    def localize(self, payload: bytes, dagger: bool = False) -> InferenceResult:
        params = self.ensure_loaded()
        image = Tensor(decode_ppm(payload, self.settings.channels))
        expected = (self.settings.channels, self.settings.image_size, self.settings.image_size)
        if image.shape != expected:
            raise ShapeError.mismatch("localize image", image.shape, expected)
        result = run_inference(image, params, self.settings, dagger)
        self.logger.info("localized", top1=result.ranked_classes[0], box=result.box.as_tuple())
        return result

    def health_check(self) -> Dict[str, Any]:
        if self.is_loaded:
            return {
                "status": "healthy",
                "checkpoint": str(self.checkpoint_path),
                "parameters": self.params.num_values(),
            }
        return {
            "status": "unhealthy",
            "checkpoint": str(self.default_checkpoint),
            "error": self.load_error or "no checkpoint loaded",
        }


# Global inference service instance
inference_service = InferenceService()
