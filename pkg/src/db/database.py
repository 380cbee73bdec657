"""
Database layer for persisted trial batches.

Supports PostgreSQL on the deployment platform and falls back gracefully
to JSONL if no database URL is configured or SQLAlchemy is unavailable.

Usage:
    from src.db.database import get_engine, init_db

    # On startup:
    init_db()

    # In the results store:
    engine = get_engine()
    if engine:
        # write to DB
    else:
        # write to JSONL
"""
import json
import logging
from datetime import datetime, timedelta
from typing import Dict, List, Optional

from src.config import get_settings

logger = logging.getLogger(__name__)

# Graceful import: without SQLAlchemy everything degrades to JSONL
try:
    from sqlalchemy import (
        Column, DateTime, Float, Integer, MetaData, String, Table, Text,
        and_, create_engine, select,
    )
    _SA_AVAILABLE = True
except ImportError:
    _SA_AVAILABLE = False
    logger.warning("SQLAlchemy not installed, trial results will use JSONL fallback")


# ── Schema ────────────────────────────────────────────────────────────────

if _SA_AVAILABLE:
    _metadata = MetaData()

    trial_results = Table("trial_results", _metadata,
        Column("id", Integer, primary_key=True, autoincrement=True),
        Column("timestamp", DateTime, nullable=False),
        Column("scenario", String(200), nullable=True),
        Column("condition", String(100), nullable=False),
        Column("modality", String(20), nullable=False),
        Column("base_seed", Integer, nullable=False),
        Column("repetitions", Integer, nullable=False),
        Column("packet_bits", Integer, nullable=True),
        Column("accuracy", Float, nullable=False),
        Column("false_positive_rate", Float, nullable=False),
        Column("false_negative_rate", Float, nullable=False),
        Column("mean_latency_ms", Float, nullable=True),
        Column("ranging_sessions", Integer, default=0),
        Column("fast_path_hits", Integer, default=0),
        Column("fingerprint", String(64), nullable=False),
        Column("trace_hashes_json", Text, nullable=True),  # JSON array, one per trial
    )
else:
    _metadata = None
    trial_results = None


# ── Engine singleton ──────────────────────────────────────────────────────

_engine = None


def get_engine():
    """Return a SQLAlchemy engine, or None if no database is configured."""
    global _engine
    if not _SA_AVAILABLE:
        return None
    if _engine is not None:
        return _engine

    url = get_settings().database_url
    if not url:
        return None

    # The platform hands out postgres:// which SQLAlchemy 2.x requires as postgresql://
    if url.startswith("postgres://"):
        url = url.replace("postgres://", "postgresql://", 1)

    try:
        _engine = create_engine(url, pool_pre_ping=True)
        logger.info("Database engine initialized")
        return _engine
    except Exception as e:
        logger.error(f"Failed to initialize database engine: {e}")
        return None


def init_db() -> bool:
    """Create all tables if they do not exist. Returns True if DB is available."""
    engine = get_engine()
    if not engine:
        logger.info("No database_url set, trial results will use JSONL fallback")
        return False
    try:
        _metadata.create_all(engine)
        logger.info("Database tables created / verified")
        return True
    except Exception as e:
        logger.error(f"Failed to create database tables: {e}")
        return False


# ── Read helpers (return JSONL-compatible dicts) ──────────────────────────

def read_trial_results(engine, days: Optional[int] = None, modality: Optional[str] = None) -> List[Dict]:
    stmt = select(trial_results)
    filters = []
    if days:
        filters.append(trial_results.c.timestamp >= datetime.utcnow() - timedelta(days=days))
    if modality:
        filters.append(trial_results.c.modality == modality)
    if filters:
        stmt = stmt.where(and_(*filters))
    with engine.connect() as conn:
        rows = conn.execute(stmt.order_by(trial_results.c.timestamp)).mappings().all()

    result = []
    for row in rows:
        hashes = []
        if row["trace_hashes_json"]:
            try:
                hashes = json.loads(row["trace_hashes_json"])
            except (json.JSONDecodeError, TypeError):
                pass
        ts = row["timestamp"]
        result.append({
            "timestamp": ts.isoformat() + "Z" if isinstance(ts, datetime) else str(ts),
            "scenario": row["scenario"],
            "condition": row["condition"],
            "modality": row["modality"],
            "base_seed": row["base_seed"],
            "repetitions": row["repetitions"],
            "packet_bits": row["packet_bits"],
            "accuracy": row["accuracy"],
            "false_positive_rate": row["false_positive_rate"],
            "false_negative_rate": row["false_negative_rate"],
            "mean_latency_ms": row["mean_latency_ms"],
            "ranging_sessions": row["ranging_sessions"],
            "fast_path_hits": row["fast_path_hits"],
            "fingerprint": row["fingerprint"],
            "trace_hashes": hashes,
        })
    return result
