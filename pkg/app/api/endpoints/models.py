from fastapi import APIRouter, HTTPException
import logging

from app.core.exceptions import MartnormError
from app.schemas.model import ModelDocument, ValidationReport
from app.services.filtration_core import filtration_service

logger = logging.getLogger(__name__)
router = APIRouter()


@router.post("/validate", response_model=ValidationReport)
async def validate_model(doc: ModelDocument):
    """Check a model document; violations and warnings come back in the report"""
    try:
        report = filtration_service.validate_model(doc)
        logger.info(f"validated model with {len(doc.nodes)} nodes: passed={report.passed}")
        return report
    except HTTPException:
        raise
    except MartnormError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except Exception as e:
        logger.error(f"Error validating model: {e}")
        raise HTTPException(status_code=500, detail=f"Failed to validate model: {str(e)}")
