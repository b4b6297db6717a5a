"""HTTP service exposing the reannotation queue and run status.

The loop runs in one background thread and stays the only mutator of pools
and model state.  HTTP handlers talk to it exclusively through the
ReannotationBridge: the loop publishes request views and blocks for
decisions; handlers validate submissions and enqueue them.
"""

from __future__ import annotations

import queue as queue_module
import sys
import threading

from fastapi import FastAPI, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware

from .config import ConfigError, RunSpec, build_bundle, resolve_output_dir
from .corpus import surfaces_by_question_type
from .loop import run, write_curves_csv, write_filtration_csv, write_result_json
from .oracle import Decision, make_oracle

# Status phase shown after each lifecycle event; the gaps between events are
# short, so "the step that just completed" is accurate enough for polling.
_PHASES = {
    "selection_done": "selection",
    "reannotation_start": "reannotation",
    "reannotation_done": "reannotation",
    "train_done": "training",
    "epoch_done": "evaluation",
    "run_end": "finished",
}


class SubmissionError(Exception):
    """A rejected queue submission, carrying the HTTP status to report."""

    def __init__(self, status_code: int, detail: str):
        super().__init__(detail)
        self.status_code = status_code
        self.detail = detail


class ReannotationBridge:
    """Thread-safe mailbox between HTTP handlers and the running loop."""

    def __init__(self, corpus):
        self.corpus = corpus
        self._lock = threading.Lock()
        self._views: dict[int, dict] = {}
        self._decided: set[int] = set()
        self._decisions: queue_module.Queue = queue_module.Queue()

    # -- loop side ---------------------------------------------------------
    def publish(self, views) -> None:
        with self._lock:
            self._views = {int(view["instance_id"]): view for view in views}
            self._decided = set()
            while True:  # decisions from an earlier phase are stale
                try:
                    self._decisions.get_nowait()
                except queue_module.Empty:
                    break

    def next_decision(self, timeout: float):
        try:
            return self._decisions.get(timeout=max(float(timeout), 1e-3))
        except queue_module.Empty:
            return None

    def clear(self) -> None:
        self.publish([])

    # -- HTTP side ---------------------------------------------------------
    def pending(self) -> list[dict]:
        with self._lock:
            return [self._views[i] for i in sorted(self._views)
                    if i not in self._decided]

    def submit(self, instance_id: int, payload) -> dict:
        if not isinstance(payload, dict):
            raise SubmissionError(400, "body must be a JSON object")
        action = payload.get("action")
        if action not in ("keep", "replace"):
            raise SubmissionError(400, "action must be 'keep' or 'replace'")
        with self._lock:
            if instance_id not in self._views:
                raise SubmissionError(
                    404, f"no pending request for instance {instance_id}")
            if instance_id in self._decided:
                raise SubmissionError(
                    409, f"instance {instance_id} is already resolved")
            term_id = None
            if action == "replace":
                surface = payload.get("term_surface")
                if not surface or not isinstance(surface, str):
                    raise SubmissionError(400, "replace needs a term_surface")
                term_id = self.corpus.id_of(surface)
                if term_id is None:
                    raise SubmissionError(400, f"unknown term {surface!r}")
                qtype = self._views[instance_id]["qtype"]
                if not self.corpus.answers(term_id, qtype):
                    raise SubmissionError(
                        400, f"{surface!r} cannot answer a {qtype} question")
            self._decided.add(instance_id)
            self._decisions.put(Decision(instance_id, action, term_id))
        return {"instance_id": instance_id, "action": action, "accepted": True}


class RunController:
    """Owns the background experiment and answers status queries."""

    def __init__(self, spec: RunSpec):
        if spec.loop.oracle_kind != "remote_human":
            raise ConfigError("the service requires oracle 'remote_human'")
        self.spec = spec
        self.bundle = build_bundle(spec)
        self.bridge = ReannotationBridge(self.bundle.corpus)
        self._oracle = make_oracle(
            "remote_human", self.bundle.corpus, self.bundle.refined,
            self.bundle.mapping, bridge=self.bridge,
            timeout=spec.loop.remote_timeout)
        self._terms = surfaces_by_question_type(self.bundle.corpus,
                                                self.bundle.refined)
        self._lock = threading.Lock()
        self._epoch = 0
        self._phase = "starting"
        self._pool_sizes = (0, 0, 0)
        self._done = threading.Event()
        self._thread: threading.Thread | None = None
        self.result = None
        self.error: Exception | None = None

    def start(self) -> None:
        if self._thread is not None:
            raise RuntimeError("controller already started")
        self._thread = threading.Thread(target=self._main, name="aqua-run",
                                        daemon=True)
        self._thread.start()

    def wait(self, timeout=None) -> bool:
        return self._done.wait(timeout)

    def _main(self) -> None:
        try:
            self.result = run(self.spec.loop, self.bundle.dataset, self.bundle,
                              observer=self._observe, oracle=self._oracle)
        except Exception as exc:  # noqa: BLE001  - surfaced through status()
            self.error = exc
            with self._lock:
                self._phase = "failed"
        finally:
            self.bridge.clear()
            self._done.set()

    def _observe(self, event: str, epoch: int, pool) -> None:
        if event == "reannotation_done":
            # The queue is drained (or timed out); stale views must not
            # linger in the pending list between phases.
            self.bridge.clear()
        with self._lock:
            self._epoch = epoch
            self._phase = _PHASES.get(event, self._phase)
            self._pool_sizes = pool.sizes()

    def status(self) -> dict:
        pending = len(self.bridge.pending())
        with self._lock:
            unlabeled, labeled, flagged = self._pool_sizes
            view = {
                "epoch": self._epoch,
                "phase": self._phase,
                "pool_sizes": {"unlabeled": unlabeled, "labeled": labeled,
                               "flagged": flagged},
                "suspended": pending > 0,
                "pending_count": pending,
                "done": self._done.is_set(),
                "canonical_terms": self._terms,
            }
        if self.result is not None:
            view["final"] = self.result.final
        if self.error is not None:
            view["error"] = str(self.error)
        return view


def build_app(controller: RunController) -> FastAPI:
    app = FastAPI(title="aqua reannotation service")
    # the browser console is served as a static page from wherever; this is a
    # single-user local tool, so any origin may call the API
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["GET", "POST"],
        allow_headers=["content-type"],
    )

    @app.get("/api/status")
    def get_status():
        return controller.status()

    @app.get("/api/reannotation/pending")
    def get_pending():
        return controller.bridge.pending()

    @app.post("/api/reannotation/{instance_id}")
    async def post_resolution(instance_id: int, request: Request):
        try:
            payload = await request.json()
        except Exception:
            raise HTTPException(status_code=400, detail="body must be JSON") from None
        try:
            return controller.bridge.submit(instance_id, payload)
        except SubmissionError as exc:
            raise HTTPException(status_code=exc.status_code,
                                detail=exc.detail) from None

    return app


def serve_forever(spec: RunSpec, host: str = "127.0.0.1", port: int = 8000) -> int:
    """Run the loop plus HTTP API until the run completes; returns exit code."""
    import uvicorn

    out_dir = resolve_output_dir(spec)
    controller = RunController(spec)
    server = uvicorn.Server(uvicorn.Config(build_app(controller), host=host,
                                           port=port, log_level="warning"))

    def stop_when_done():
        controller.wait()
        server.should_exit = True

    controller.start()
    threading.Thread(target=stop_when_done, daemon=True).start()
    print(f"serving on http://{host}:{port} until the run completes")
    server.run()
    controller.wait()
    if controller.error is not None:
        print(f"error: run failed: {controller.error}", file=sys.stderr)
        return 1
    write_result_json(controller.result, out_dir / "result.json")
    write_curves_csv(controller.result, out_dir / "curves.csv")
    write_filtration_csv(controller.result, out_dir / "filtration.csv")
    print(f"wrote {out_dir / 'result.json'}")
    return 0
