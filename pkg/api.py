import os
import threading
import uuid
from datetime import datetime, timezone
from logging import getLogger

from dagster import materialize, AssetSelection
from flask import Flask, jsonify, request
from flask_cors import CORS
from pydantic import ValidationError

from defs import all_assets, asset_meta, build_simulate_run_config, defs as dag_defs
from errors import EvRobustError
from tasks import compare_to_reference, load_result, load_simulate_config, load_sweep_config, run_sweep

logger = getLogger(__name__)

app = Flask(__name__)

# CORS: allow only configured origins (comma-separated). Example local: http://localhost:3000
_origins = [
    o.strip() for o in os.environ.get("ALLOWED_ORIGINS", "").split(",") if o.strip()
]
if _origins:
    CORS(app, resources={r"/*": {"origins": _origins}})
else:
    CORS(app)

# run_id -> {"kind", "status", "created_at", "result" | "error"}, insertion ordered
RUNS: dict[str, dict] = {}
_runs_lock = threading.Lock()
MAX_RUNS = int(os.environ.get("EVROBUST_MAX_RUNS", 256))
FINISHED = ("succeeded", "failed")

SIMULATE_FIELDS = ("frames", "output", "thetas", "levels", "bins", "lam", "sigma_n", "seed")


def _evict_finished() -> None:
    """Drop the oldest finished runs while the registry is at capacity. Caller holds the lock."""
    excess = len(RUNS) - MAX_RUNS + 1
    if excess <= 0:
        return
    stale = [rid for rid, run in RUNS.items() if run["status"] in FINISHED][:excess]
    for rid in stale:
        del RUNS[rid]
    if stale:
        logger.info(f"[api] evicted finished runs count={len(stale)} remaining={len(RUNS)}")


def _new_run(kind: str) -> str:
    run_id = uuid.uuid4().hex
    with _runs_lock:
        _evict_finished()
        RUNS[run_id] = {
            "kind": kind,
            "status": "queued",
            "created_at": datetime.now(timezone.utc).isoformat(),
        }
    return run_id


def _update_run(run_id: str, **fields) -> None:
    with _runs_lock:
        RUNS[run_id].update(fields)


def _snapshot(run_id: str) -> dict:
    with _runs_lock:
        return dict(RUNS.get(run_id) or {})


def _error_body(e: Exception) -> dict:
    if isinstance(e, ValidationError):
        return {"ok": False, "error": "invalid_config", "details": e.errors(include_url=False, include_context=False)}
    return {"ok": False, "error": type(e).__name__, "message": str(e)}


def _sweep_payload(result) -> dict:
    return {
        "csv_path": result.csv_path,
        "config_hash": result.config_hash,
        "seed": result.seed,
        "mode": result.mode,
        "rows": [r.model_dump() for r in result.rows],
    }


def _run_sweep(run_id: str, cfg) -> bool:
    """Run one sweep and record its outcome under ``run_id``."""
    _update_run(run_id, status="running")
    try:
        result = run_sweep(cfg)
    except Exception as e:
        logger.error(f"[api] sweep failed run_id={run_id}: {e}")
        _update_run(run_id, status="failed", error=str(e))
        return False
    _update_run(run_id, status="succeeded", result=_sweep_payload(result))
    logger.info(f"[api] sweep succeeded run_id={run_id} csv={result.csv_path}")
    return True


def _run_simulate(run_id: str, values: dict, selection=None) -> bool:
    """Materialize the simulate assets using Dagster SDK."""
    _update_run(run_id, status="running")
    try:
        logger.info(f"[api] materializing simulate assets run_id={run_id} selection={selection}")
        result = materialize(
            assets=all_assets,
            run_config=build_simulate_run_config(values),
            selection=selection,
            raise_on_error=False,  # Don't crash API on stage failures
        )
    except Exception as e:
        logger.error(f"[api] materialization error run_id={run_id}: {e}")
        _update_run(run_id, status="failed", error=str(e))
        return False
    _update_run(run_id, status="succeeded" if result.success else "failed")
    logger.info(f"[api] materialization completed run_id={run_id} success={result.success}")
    return result.success


def _run_async(target, *args) -> None:
    """Run in background thread to avoid blocking API."""
    thread = threading.Thread(target=target, args=args)
    thread.daemon = True
    thread.start()


def _wait_requested() -> bool:
    return request.args.get("wait", "").lower() in ("true", "1", "yes")


@app.before_request
def _require_api_key():
    """Require API key for all routes except health checks when API_KEY is set.

    Expect header: Authorization: Bearer <API_KEY>
    """
    api_key = (os.environ.get("API_KEY") or "").strip()
    if not api_key:
        return None  # no auth enforced
    if request.path in ("/healthz", "/_healthz"):
        return None
    auth = request.headers.get("Authorization", "")
    if not auth.startswith("Bearer ") or auth.split(" ", 1)[1].strip() != api_key:
        return jsonify({"ok": False, "error": "unauthorized"}), 401


@app.post("/sweeps")
def create_sweep():
    """Start a robustness sweep.

    Body: {"config_path": str, ...overrides} or inline config fields.
    Query params:
      - wait: run synchronously and return the rows
    """
    body = request.get_json(silent=True) or {}
    config_path = body.pop("config_path", None)
    try:
        cfg = load_sweep_config(config_path, overrides=body)
    except (EvRobustError, ValidationError) as e:
        return jsonify(_error_body(e)), 400

    run_id = _new_run("sweep")
    logger.info(f"[api] create_sweep run_id={run_id} dataset={cfg.dataset} mode={cfg.mode}")
    if _wait_requested():
        ok = _run_sweep(run_id, cfg)
        return jsonify({"ok": ok, "run_id": run_id, **_snapshot(run_id)}), (200 if ok else 500)
    _run_async(_run_sweep, run_id, cfg)
    return jsonify({"ok": True, "run_id": run_id, "queued": True}), 202


@app.get("/sweeps/<run_id>")
def get_sweep(run_id: str):
    run = _snapshot(run_id)
    if not run or run["kind"] != "sweep":
        return jsonify({"ok": False, "error": "not_found"}), 404
    return jsonify({"ok": True, "run_id": run_id, **run})


@app.post("/compare")
def compare():
    """Compare a result CSV against a reference curve.

    Body: {"result": path, "reference": path, "tolerance_sigma": float}
    """
    body = request.get_json(silent=True) or {}
    if not body.get("result") or not body.get("reference"):
        return jsonify({"ok": False, "error": "missing_paths"}), 400
    try:
        report = compare_to_reference(
            load_result(body["result"]),
            body["reference"],
            float(body.get("tolerance_sigma", 3.0)),
        )
    except (EvRobustError, ValueError) as e:
        return jsonify(_error_body(e)), 400
    return jsonify({"ok": report.exit_code == 0, "exit_code": report.exit_code, "report": report.model_dump()})


@app.post("/simulate")
def simulate():
    """Materialize the simulate pipeline (frames -> events -> voxels -> thinned -> manifest).

    Body: {"frames", "output", "thetas", "levels", "bins", "lam", "sigma_n", "seed"}
    Query params:
      - start: asset key to restart from (it and everything downstream)
      - wait: run synchronously
    """
    body = request.get_json(silent=True) or {}
    values = {k: body[k] for k in SIMULATE_FIELDS if body.get(k) is not None}
    for key in ("thetas", "levels"):
        if isinstance(values.get(key), list):
            values[key] = ",".join(repr(float(v)) for v in values[key])
    try:
        load_simulate_config(overrides=values)
    except (EvRobustError, ValidationError) as e:
        return jsonify(_error_body(e)), 400

    selection = None
    start = (request.args.get("start") or "").strip()
    if start:
        meta = asset_meta.get(start)
        if not meta:
            return jsonify({"ok": False, "error": "invalid_start"}), 400
        selection = AssetSelection.keys(meta["key"]).downstream()
        logger.info(f"[api] simulate restart-from start={start} selection={[k.to_user_string() for k in selection.resolve(dag_defs)]}")

    run_id = _new_run("simulate")
    if _wait_requested():
        ok = _run_simulate(run_id, values, selection)
        return jsonify({"ok": ok, "run_id": run_id, **_snapshot(run_id)}), (200 if ok else 500)
    _run_async(_run_simulate, run_id, values, selection)
    return jsonify({"ok": True, "run_id": run_id, "queued": True}), 202


@app.get("/runs/<run_id>")
def get_run(run_id: str):
    run = _snapshot(run_id)
    if not run:
        return jsonify({"ok": False, "error": "not_found"}), 404
    return jsonify({"ok": True, "run_id": run_id, **run})


@app.get("/healthz")
def healthz():
    return jsonify({"ok": True})


if __name__ == "__main__":
    port = int(os.environ.get("PORT", 5000))
    app.run(debug=True, host="0.0.0.0", port=port)
