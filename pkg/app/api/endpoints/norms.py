from fastapi import APIRouter, HTTPException
from typing import Optional
from pydantic import BaseModel, Field
import logging

from app.core.exceptions import MartnormError
from app.schemas.model import ModelDocument
from app.schemas.reports import DecompositionDocument, NormReport, Strategy
from app.services.decomposition import decomposition_service
from app.services.model_io import LoadedModel

logger = logging.getLogger(__name__)
router = APIRouter()


class NormRequest(BaseModel):
    model: ModelDocument
    process: str
    measure: str = "ref"
    strategy: Strategy = "finest"
    max_segments: Optional[int] = Field(default=None, ge=1)


class DecomposeRequest(BaseModel):
    model: ModelDocument
    process: str
    measure: str = "ref"


@router.post("/norm", response_model=NormReport)
async def norm(request: NormRequest):
    """Squared sup norm and partition norm of a named process"""
    try:
        loaded = LoadedModel(request.model)
        return decomposition_service.norm_p(
            loaded.model,
            loaded.measure(request.measure),
            loaded.process(request.process),
            request.strategy,
            request.max_segments,
        )
    except HTTPException:
        raise
    except MartnormError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except Exception as e:
        logger.error(f"Error computing norm: {e}")
        raise HTTPException(status_code=500, detail=f"Failed to compute norm: {str(e)}")


@router.post("/decompose", response_model=DecompositionDocument)
async def decompose(request: DecomposeRequest):
    try:
        loaded = LoadedModel(request.model)
        model, measure = loaded.model, loaded.measure(request.measure)
        dec = decomposition_service.doob_decompose(model, measure, loaded.process(request.process))
        bracket = decomposition_service.quadratic_variation_energy(model, measure, dec.M)
        tv = decomposition_service.total_variation(model, dec.A).values[model.leaves]
        variation = decomposition_service.core.leaf_expectation(model, measure, tv ** 2)
        return dec.to_document(model, bracket, variation)
    except HTTPException:
        raise
    except MartnormError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except Exception as e:
        logger.error(f"Error decomposing process: {e}")
        raise HTTPException(status_code=500, detail=f"Failed to decompose process: {str(e)}")
