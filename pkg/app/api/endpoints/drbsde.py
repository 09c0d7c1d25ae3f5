from fastapi import APIRouter, HTTPException
from typing import Literal, Optional
from pydantic import BaseModel
import logging

from app.core.exceptions import MartnormError
from app.schemas.model import ModelDocument
from app.schemas.reports import EstimateReport, SolutionDocument
from app.services.drbsde import drbsde_service
from app.services.model_io import LoadedModel

logger = logging.getLogger(__name__)
router = APIRouter()


class DrbsdeRequest(BaseModel):
    model: ModelDocument
    # name of an instance in model.instances; the first one when omitted
    instance: Optional[str] = None
    measure: str = "ref"
    scheme: Literal["auto", "explicit", "picard"] = "auto"


@router.post("/solve", response_model=SolutionDocument)
async def solve(request: DrbsdeRequest):
    """Reflected backward solution (Y, Z, K+, K-) of a DRBSDE instance"""
    try:
        loaded = LoadedModel(request.model)
        model, measure = loaded.model, loaded.measure(request.measure)
        scheme = None if request.scheme == "auto" else request.scheme
        solution = drbsde_service.solve(model, measure, loaded.instance(request.instance), scheme)
        expected = drbsde_service.core.leaf_expectation(model, measure, solution.leaf_variation())
        return solution.to_document(expected)
    except HTTPException:
        raise
    except MartnormError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except Exception as e:
        logger.error(f"Error solving DRBSDE: {e}")
        raise HTTPException(status_code=500, detail=f"Failed to solve DRBSDE: {str(e)}")


@router.post("/estimate", response_model=EstimateReport)
async def estimate(request: DrbsdeRequest):
    try:
        loaded = LoadedModel(request.model)
        scheme = None if request.scheme == "auto" else request.scheme
        return drbsde_service.estimate_report(
            loaded.model, loaded.measure(request.measure), loaded.instance(request.instance), scheme
        )
    except HTTPException:
        raise
    except MartnormError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except Exception as e:
        logger.error(f"Error computing estimate: {e}")
        raise HTTPException(status_code=500, detail=f"Failed to compute estimate: {str(e)}")
