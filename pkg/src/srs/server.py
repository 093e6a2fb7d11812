"""HTTP surface over a live run.

Read endpoints serve immutable snapshots; the single write endpoint funnels
governance decisions into the loop's serialized command queue. ``/events``
is a server-sent stream of line-delimited JSON lifecycle events. Role
headers are trusted as-is: the boundary is a localhost demo, not an
authentication system.
"""

import json
import queue

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse, StreamingResponse
from pydantic import BaseModel

from .canonical import sanitize
from .errors import Unauthorized
from .gateway import LiveRun


class DecisionBody(BaseModel):
    decision: str
    actor_role: str
    actor_id: str = "operator"


def create_app(run: LiveRun, console_dir=None) -> FastAPI:
    app = FastAPI(title="responsibility supervisor gateway")

    @app.exception_handler(RequestValidationError)
    async def malformed(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.get("/state")
    def state():
        return run.state()

    @app.get("/signals")
    def signals(from_tick: int = 0):
        return sanitize(run.signals(from_tick=from_tick))

    @app.get("/scorecard")
    def scorecard():
        return sanitize(run.scorecard())

    @app.get("/proposals")
    def proposals():
        return run.proposals()

    @app.get("/log/head")
    def log_head():
        return run.log_head()

    @app.post("/proposals/{proposal_id}/decision")
    def decide(proposal_id: str, body: DecisionBody):
        try:
            result = run.submit_decision(proposal_id, body.decision,
                                         body.actor_role, body.actor_id)
        except KeyError:
            return JSONResponse(status_code=404, content={"detail": f"unknown proposal {proposal_id}"})
        except Unauthorized as exc:
            return JSONResponse(status_code=403, content={"detail": str(exc)})
        except ValueError as exc:
            return JSONResponse(status_code=400, content={"detail": str(exc)})
        except RuntimeError as exc:
            if str(exc) == "not_pending":
                return JSONResponse(status_code=409, content={"detail": f"{proposal_id} is not pending"})
            return JSONResponse(status_code=409, content={"detail": str(exc)})
        return result

    @app.get("/events")
    def events(limit: int = 0):
        """Line-delimited JSON event stream; ``limit`` > 0 closes after that
        many events (0 streams until the run ends)."""
        q = run.events.subscribe()

        def stream():
            sent = 0
            try:
                yield json.dumps({"event": "hello", **run.state()}) + "\n"
                sent += 1
                while limit <= 0 or sent < limit:
                    try:
                        line = q.get(timeout=1.0)
                        yield line + "\n"
                        sent += 1
                    except queue.Empty:
                        if run.state()["status"] in ("Finished", "Halted"):
                            break
                        yield "\n"  # keep-alive
            finally:
                run.events.unsubscribe(q)

        return StreamingResponse(stream(), media_type="application/x-ndjson")

    if console_dir is not None:
        @app.get("/console")
        def console_index():
            return FileResponse(str(console_dir / "index.html"))

        @app.get("/console/{path:path}")
        def console_asset(path: str):
            return FileResponse(str(console_dir / path))

    return app


def serve(run: LiveRun, port: int, host: str = "127.0.0.1", console_dir=None,
          linger_s: float = 5.0):
    """Run uvicorn in the calling thread; shuts down ``linger_s`` seconds
    after the run finishes so late readers still get the final state."""
    import threading
    import time
    import uvicorn

    app = create_app(run, console_dir=console_dir)
    config = uvicorn.Config(app, host=host, port=port, log_level="warning")
    server = uvicorn.Server(config)

    def stop_when_done():
        try:
            run.join()
        except Exception:
            pass
        time.sleep(linger_s)
        server.should_exit = True

    threading.Thread(target=stop_when_done, daemon=True).start()
    server.run()
