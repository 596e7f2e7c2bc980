from app.services.inference import InferenceService, inference_service


async def get_inference_service() -> InferenceService:
    """FastAPI dependency to get the inference service instance"""
    return inference_service
