from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from app.api.routes import api_router
from app.core.config import settings
import logging

app = FastAPI(
    title="martnorm API",
    description="Semimartingale norms, reflected BSDEs and G-expectations on finite filtrations",
    version=settings.VERSION,
)

# Set up CORS
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Include API routes
app.include_router(api_router, prefix=settings.API_V1_STR)

@app.on_event("startup")
async def startup_event():
    logger = logging.getLogger(__name__)
    logger.info(f"Starting {settings.PROJECT_NAME} API (enumeration cap {settings.MARTNORM_CAP})")

@app.get("/")
async def root():
    return {"message": f"{settings.PROJECT_NAME} API is running!"}

@app.get("/health")
async def health_check():
    return {"status": "healthy"}
