"""
Results Store
Persists trial batches so runs can be compared over time.

Primary storage: PostgreSQL via SQLAlchemy (when database_url is set).
Fallback storage: logs/trials.jsonl
"""
import hashlib
import json
import logging
import os
from datetime import datetime, timedelta
from typing import Dict, List, Optional

from src.services.harness import BatchResult

logger = logging.getLogger(__name__)

TRIALS_LOG = "logs/trials.jsonl"


def fingerprint_digest(batch: BatchResult) -> str:
    """SHA-256 of the batch fingerprint; equal digests mean identical results."""
    payload = json.dumps(batch.fingerprint(), separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def log_batch_result(
    batch: BatchResult,
    scenario: Optional[str] = None,
    packet_bits: Optional[int] = None,
) -> bool:
    """
    Append a batch summary to DB (primary) or JSONL (fallback).

    Returns:
        True if logged successfully, False otherwise
    """
    digest = fingerprint_digest(batch)
    hashes = [t.trace_hash for t in batch.trials]

    # Try DB first
    try:
        from src.db.database import get_engine, trial_results
        engine = get_engine()
        if engine:
            with engine.connect() as conn:
                conn.execute(trial_results.insert().values(
                    timestamp=datetime.utcnow(),
                    scenario=scenario,
                    condition=batch.condition,
                    modality=batch.modality,
                    base_seed=batch.base_seed,
                    repetitions=batch.repetitions,
                    packet_bits=packet_bits,
                    accuracy=batch.accuracy,
                    false_positive_rate=batch.false_positive_rate,
                    false_negative_rate=batch.false_negative_rate,
                    mean_latency_ms=batch.mean_latency_ms,
                    ranging_sessions=batch.ranging_sessions,
                    fast_path_hits=batch.fast_path_hits,
                    fingerprint=digest,
                    trace_hashes_json=json.dumps(hashes),
                ))
                conn.commit()
            logger.info(f"[{batch.condition}] Batch written to DB: accuracy={batch.accuracy:.3f} ({digest[:12]})")
            return True
    except Exception as e:
        logger.warning(f"[{batch.condition}] DB write failed ({e}), falling back to JSONL")

    # JSONL fallback
    try:
        os.makedirs(os.path.dirname(TRIALS_LOG) or ".", exist_ok=True)
        entry = {
            "timestamp": datetime.utcnow().isoformat() + "Z",
            "scenario": scenario,
            "condition": batch.condition,
            "modality": batch.modality,
            "base_seed": batch.base_seed,
            "repetitions": batch.repetitions,
            "packet_bits": packet_bits,
            "accuracy": batch.accuracy,
            "false_positive_rate": batch.false_positive_rate,
            "false_negative_rate": batch.false_negative_rate,
            "mean_latency_ms": batch.mean_latency_ms,
            "ranging_sessions": batch.ranging_sessions,
            "fast_path_hits": batch.fast_path_hits,
            "fingerprint": digest,
            "trace_hashes": hashes,
        }
        with open(TRIALS_LOG, "a") as f:
            f.write(json.dumps(entry) + "\n")
        logger.info(f"[{batch.condition}] Batch logged to JSONL: accuracy={batch.accuracy:.3f} ({digest[:12]})")
        return True
    except Exception as e:
        logger.error(f"[{batch.condition}] Failed to log batch: {e}")
        return False


def get_results_summary(days: Optional[int] = None) -> Dict:
    """
    Aggregate persisted batches by (modality, condition).

    Returns:
        dict with the run count and one group per (modality, condition),
        rates averaged over runs and latency averaged over runs that had one
    """
    entries = _fetch_all_results(days)
    if not entries:
        return {"runs": 0, "groups": []}

    groups: Dict[tuple, List[Dict]] = {}
    for e in entries:
        groups.setdefault((e.get("modality"), e.get("condition")), []).append(e)

    summary = []
    for (modality, condition), runs in sorted(groups.items(), key=lambda kv: (str(kv[0][0]), str(kv[0][1]))):
        latencies = [r["mean_latency_ms"] for r in runs if r.get("mean_latency_ms") is not None]
        summary.append({
            "modality": modality,
            "condition": condition,
            "runs": len(runs),
            "trials": sum(r.get("repetitions", 0) for r in runs),
            "accuracy": round(sum(r["accuracy"] for r in runs) / len(runs), 4),
            "false_positive_rate": round(sum(r["false_positive_rate"] for r in runs) / len(runs), 4),
            "mean_latency_ms": round(sum(latencies) / len(latencies), 1) if latencies else None,
            "distinct_fingerprints": len({r.get("fingerprint") for r in runs}),
        })
    return {"runs": len(entries), "groups": summary}


def _fetch_all_results(days: Optional[int] = None) -> List[Dict]:
    """Fetch all batch records from DB or JSONL."""
    try:
        from src.db.database import get_engine, read_trial_results
        engine = get_engine()
        if engine:
            return read_trial_results(engine, days=days)
    except Exception as e:
        logger.warning(f"DB read failed for trial results ({e}), falling back to JSONL")

    return _read_jsonl(TRIALS_LOG, days)


def _read_jsonl(filepath: str, days: Optional[int] = None) -> List[Dict]:
    """Read a JSONL file, keeping entries from the last `days` days when given."""
    if not os.path.exists(filepath):
        return []

    cutoff = None
    if days:
        cutoff = (datetime.utcnow() - timedelta(days=days)).isoformat() + "Z"

    entries = []
    with open(filepath) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            try:
                entry = json.loads(line)
                if cutoff and entry.get("timestamp", "") < cutoff:
                    continue
                entries.append(entry)
            except json.JSONDecodeError:
                continue
    return entries
