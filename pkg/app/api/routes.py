from fastapi import APIRouter
from app.api.endpoints import models, norms, drbsde, gexp, generators

api_router = APIRouter()

api_router.include_router(models.router, prefix="/models", tags=["models"])
api_router.include_router(norms.router, prefix="/norms", tags=["norms"])
api_router.include_router(drbsde.router, prefix="/drbsde", tags=["drbsde"])
api_router.include_router(gexp.router, prefix="/gexp", tags=["gexp"])
api_router.include_router(generators.router, prefix="/generators", tags=["generators"])
