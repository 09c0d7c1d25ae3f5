from fastapi import APIRouter, HTTPException
from pydantic import BaseModel
import logging

from app.core.exceptions import MartnormError
from app.schemas.model import ModelDocument
from app.schemas.reports import GClassification
from app.services.gexp import g_expectation_service
from app.services.model_io import LoadedModel

logger = logging.getLogger(__name__)
router = APIRouter()


class FamilyRequest(BaseModel):
    """The measure family is read from model.family"""
    model: ModelDocument
    process: str


class ExpectationResponse(BaseModel):
    value: float


@router.post("/expectation", response_model=ExpectationResponse)
async def g_expectation(request: FamilyRequest):
    try:
        loaded = LoadedModel(request.model)
        value = g_expectation_service.g_expectation(loaded.model, loaded.family(), loaded.process(request.process))
        return ExpectationResponse(value=value)
    except HTTPException:
        raise
    except MartnormError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except Exception as e:
        logger.error(f"Error computing G-expectation: {e}")
        raise HTTPException(status_code=500, detail=f"Failed to compute G-expectation: {str(e)}")


@router.post("/classify", response_model=GClassification)
async def classify(request: FamilyRequest):
    """Martingale flags of a process under every member and under the family"""
    try:
        loaded = LoadedModel(request.model)
        return g_expectation_service.classify(loaded.model, loaded.family(), loaded.process(request.process))
    except HTTPException:
        raise
    except MartnormError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except Exception as e:
        logger.error(f"Error classifying process: {e}")
        raise HTTPException(status_code=500, detail=f"Failed to classify process: {str(e)}")
