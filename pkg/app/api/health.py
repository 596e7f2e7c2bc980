from datetime import datetime, timezone
from typing import Any, Dict

from fastapi import APIRouter, Depends

from app.api.deps import get_inference_service
from app.config import settings
from app.core.errors import CheckpointError
from app.services.inference import InferenceService

router = APIRouter()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@router.get("/health", summary="Health Check", tags=["Health"])
async def health_check(
    service: InferenceService = Depends(get_inference_service)
) -> Dict[str, Any]:
    """
    Check the health status of the localization service.

    Returns:
        - Service status
        - Checkpoint status
        - Model configuration
    """
    if not service.is_loaded:
        try:
            service.ensure_loaded()
        except CheckpointError:
            pass
    checkpoint = service.health_check()
    cfg = service.settings

    return {
        "service": settings.app_name,
        "version": settings.app_version,
        "status": "healthy" if checkpoint["status"] == "healthy" else "degraded",
        "timestamp": _now(),
        "checks": {
            "checkpoint": checkpoint,
        },
        "config": {
            "image_size": cfg.image_size,
            "patch_size": cfg.patch_size,
            "classes": cfg.class_names,
            "box_threshold": cfg.box_threshold,
            "across_transformer": cfg.use_across_transformer,
        },
    }


@router.get("/health/live", summary="Liveness Probe", tags=["Health"])
async def liveness_probe() -> Dict[str, str]:
    """
    Simple liveness probe for container orchestrators.

    Returns basic service status without loading the model.
    """
    return {
        "status": "alive",
        "service": settings.app_name,
        "timestamp": _now(),
    }


@router.get("/health/ready", summary="Readiness Probe", tags=["Health"])
async def readiness_probe(
    service: InferenceService = Depends(get_inference_service)
) -> Dict[str, Any]:
    """
    Readiness probe: ready once a checkpoint is loaded.
    """
    checkpoint = service.health_check()
    return {
        "status": "ready" if service.is_loaded else "not_ready",
        "service": settings.app_name,
        "timestamp": _now(),
        "dependencies": {
            "checkpoint": checkpoint["status"],
        },
    }
