from fastapi import APIRouter, Depends, HTTPException, Query, Request, status

from app.api.deps import get_inference_service
from app.core.errors import CheckpointError, DatasetError, NonFiniteError, ShapeError
from app.core.logging import get_logger
from app.models.api import LocalizeResponse, RankedClass
from app.services.inference import InferenceService

router = APIRouter()
logger = get_logger("localize_api")


@router.post(
    "/localize",
    response_model=LocalizeResponse,
    summary="Localize Object",
    tags=["Localization"]
)
async def localize(
    request: Request,
    dagger: bool = Query(False, description="Apply the across-transformer at inference"),
    include_heatmap: bool = Query(False, description="Return the normalized heatmap"),
    service: InferenceService = Depends(get_inference_service)
) -> LocalizeResponse:
    """
    Predict the class ranking and object box of one image.

    **Request Body:**
    - Raw binary PPM (P6) image, `image_size` x `image_size` pixels

    **Response:**
    - Classes ranked by GAP logit, best first
    - Box from the top-1 class activation map
    - Heatmap dimensions, and the heatmap itself when requested
    """
    payload = await request.body()
    if not payload:
        raise HTTPException(
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            detail="Request body must contain a PPM image"
        )

    try:
        result = service.localize(payload, dagger=dagger)
    except (DatasetError, ShapeError) as e:
        raise HTTPException(
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            detail=str(e)
        )
    except (CheckpointError, NonFiniteError) as e:
        logger.error("localize_failed", error=str(e))
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=f"Localization unavailable: {e}"
        )

    names = service.settings.class_names
    return LocalizeResponse(
        ranked_classes=[
            RankedClass(index=k, name=names[k], logit=result.logits[k])
            for k in result.ranked_classes
        ],
        box=result.box,
        heatmap_size=list(result.heatmap.shape),
        heatmap=result.heatmap.tolist() if include_heatmap else None,
        dagger=dagger,
    )
