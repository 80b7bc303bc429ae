"""HTTP service speaking the locate wire protocol.

- ``GET /v1/health`` → ``200 {"status": "ok"}``
- ``POST /v1/locate`` with ``{"image": "<base64 PNG>", "field_name": "..."}``
  → ``200 {"bbox": [x0, y0, x1, y1], "confidence": c}`` in normalized
  coordinates, or ``422 {"error": "..."}`` when the request is unusable.

Every 200 box is re-validated with the evaluation harness's own BBox
check before it is sent; a checkpoint that emits an unusable box answers
422 rather than shipping garbage coordinates.
"""

from __future__ import annotations

import base64
import binascii
import io
import math
import threading
import time
from pathlib import Path
from typing import Optional

import numpy as np
import uvicorn
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel

from formbench.geometry import BBox

from localizer_service.model import CompactGrounder, load_model


class LocateRequest(BaseModel):
    image: str
    field_name: str


def _decode_image(payload: str) -> np.ndarray:
    try:
        raw = base64.b64decode(payload, validate=True)
        with Image.open(io.BytesIO(raw)) as pil:
            return np.asarray(pil.convert("RGB"))
    except (binascii.Error, UnidentifiedImageError, OSError, ValueError) as exc:
        raise ValueError(f"image does not decode as base64 PNG: {exc}") from exc


def create_app(model: CompactGrounder) -> FastAPI:
    app = FastAPI()

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        missing = ", ".join(
            ".".join(str(part) for part in error["loc"][1:]) or "body"
            for error in exc.errors()
        )
        return JSONResponse(
            status_code=422, content={"error": f"invalid request: {missing}"}
        )

    @app.get("/v1/health")
    def health():
        return {"status": "ok"}

    @app.post("/v1/locate")
    def locate(request: LocateRequest):
        if not request.field_name.strip():
            return JSONResponse(
                status_code=422, content={"error": "field_name is empty"}
            )
        try:
            image = _decode_image(request.image)
        except ValueError as exc:
            return JSONResponse(status_code=422, content={"error": str(exc)})

        corners, confidence = model.predict(image, request.field_name)
        if not all(math.isfinite(v) for v in (*corners, confidence)):
            return JSONResponse(
                status_code=422,
                content={"error": "model produced no usable box"},
            )
        # The harness-side validity check, run before we answer.
        box = BBox.from_list(list(corners))
        return {
            "bbox": [box.x0, box.y0, box.x1, box.y1],
            "confidence": confidence,
        }

    return app


class BackgroundServer:
    """Run the app on a local port in a daemon thread (tests, demos).

    ``port=0`` binds an ephemeral port; ``base_url`` reports the real one.
    """

    def __init__(self, app: FastAPI, host: str = "127.0.0.1", port: int = 0):
        config = uvicorn.Config(app, host=host, port=port, log_level="error")
        self._server = uvicorn.Server(config)
        self._thread = threading.Thread(target=self._server.run, daemon=True)
        self._host = host

    def start(self, timeout_s: float = 10.0) -> str:
        self._thread.start()
        deadline = time.monotonic() + timeout_s
        while not self._server.started:
            if time.monotonic() > deadline or not self._thread.is_alive():
                raise RuntimeError("service failed to start")
            time.sleep(0.01)
        port = self._server.servers[0].sockets[0].getsockname()[1]
        return f"http://{self._host}:{port}"

    @property
    def base_url(self) -> Optional[str]:
        if not self._server.started:
            return None
        port = self._server.servers[0].sockets[0].getsockname()[1]
        return f"http://{self._host}:{port}"

    def stop(self, timeout_s: float = 10.0) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=timeout_s)

    def __enter__(self) -> str:
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()


def serve(model_dir: Path, host: str = "127.0.0.1", port: int = 8731) -> None:
    """Load a model directory and serve it until interrupted."""
    model, _ = load_model(model_dir)
    uvicorn.run(create_app(model), host=host, port=port, log_level="info")
