from fastapi import APIRouter, HTTPException
import logging

from app.core.exceptions import MartnormError
from app.schemas.generators import GeneratorSpec
from app.schemas.model import ModelDocument
from app.services.generators import generator_service

logger = logging.getLogger(__name__)
router = APIRouter()


@router.post("/generate", response_model=ModelDocument, response_model_exclude_none=True)
async def generate(spec: GeneratorSpec):
    """Seeded instance document; the same spec always gives the same document"""
    try:
        doc = generator_service.random_instance(spec)
        logger.info(f"generated {spec.kind} instance seed={spec.seed} depth={spec.depth}")
        return doc
    except HTTPException:
        raise
    except MartnormError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except Exception as e:
        logger.error(f"Error generating instance: {e}")
        raise HTTPException(status_code=500, detail=f"Failed to generate instance: {str(e)}")
