"""
Privacy Signaling Simulator - FastAPI Application
Main entry point for running bundled or uploaded scenarios over HTTP
"""
import asyncio
import logging
import os
from datetime import datetime

from fastapi import FastAPI, HTTPException

from src.api.runs import RunRequest, SweepRequest, execute_run, execute_sweep
from src.config import get_settings
from src.services.results_store import get_results_summary
from src.services.scenario import ScenarioParseError, list_bundled_scenarios

settings = get_settings()
os.makedirs(settings.log_dir, exist_ok=True)

# Configure logging
logging.basicConfig(
    level=getattr(logging, settings.log_level.upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler(os.path.join(settings.log_dir, 'simulator.log')),
        logging.StreamHandler()
    ]
)
logger = logging.getLogger(__name__)

# Initialize FastAPI app
app = FastAPI(
    title="Privacy Signaling Simulator API",
    description="Deterministic trials of gesture, VLC and UWB bystander privacy signaling",
    version="1.0.0"
)


@app.on_event("startup")
async def startup_event():
    """Initialize services on startup"""
    logger.info("Starting Privacy Signaling Simulator API")
    # Initialize database (creates tables if database_url is set)
    from src.db.database import init_db
    if init_db():
        logger.info("Persistent database storage active")
    else:
        logger.info("No database_url, trial results stored in JSONL files")


@app.get("/health")
async def health_check():
    return {
        "status": "healthy",
        "service": "Privacy Signaling Simulator API",
        "version": "1.0.0",
        "bundled_scenarios": len(list_bundled_scenarios()),
        "timestamp": datetime.now().isoformat()
    }


@app.get("/scenarios")
async def get_scenario_list():
    return {"scenarios": list_bundled_scenarios()}


@app.post("/scenarios/run")
async def run_scenario_endpoint(request: RunRequest):
    """Run a batch of trials; the work happens off the event loop."""
    try:
        return await asyncio.to_thread(execute_run, request)
    except ScenarioParseError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except FileNotFoundError as e:
        raise HTTPException(status_code=404, detail=str(e))
    except Exception as e:
        logger.error(f"Run failed: {e}", exc_info=True)
        raise HTTPException(status_code=500, detail=f"Run failed: {str(e)}")


@app.post("/scenarios/sweep")
async def sweep_endpoint(request: SweepRequest):
    try:
        return await asyncio.to_thread(execute_sweep, request)
    except ScenarioParseError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except FileNotFoundError as e:
        raise HTTPException(status_code=404, detail=str(e))
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Sweep failed: {e}", exc_info=True)
        raise HTTPException(status_code=500, detail=f"Sweep failed: {str(e)}")


@app.get("/results/summary")
async def results_summary(days: int = None):
    return get_results_summary(days=days)


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(
        "main:app",
        host=settings.app_host,
        port=settings.app_port,
        reload=settings.debug,
    )
