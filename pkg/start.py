#!/usr/bin/env python3
"""
Startup script for the martnorm API server
"""
import os
import sys
import logging

from app.core.config import settings
from app.core.logging_setup import setup_logging

setup_logging()
logger = logging.getLogger(__name__)


def main():
    """Main startup function"""
    logger.info(f"Starting {settings.PROJECT_NAME} {settings.VERSION}...")
    try:
        import uvicorn

        port = int(os.getenv("PORT", 8000))
        host = os.getenv("HOST", "0.0.0.0")
        logger.info(f"Starting server on {host}:{port}")

        uvicorn.run(
            "app.main:app",
            host=host,
            port=port,
            log_level=settings.LOG_LEVEL.lower(),
            access_log=True,
            workers=1,
            reload=False,
            use_colors=False,
        )

    except KeyboardInterrupt:
        logger.info("Server shutdown requested")
    except Exception as e:
        logger.error(f"Failed to start server: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
