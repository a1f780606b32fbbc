"""FastAPI application for the prior service.

Error contract: 400 for schema violations, 422 for un-decodable images,
503 while the model backend is loading.  Responses are deterministic for a
fixed request (including its seed field).  Concurrency is bounded by a
semaphore; the predict deadline is enforced server-side.
"""

from __future__ import annotations

import base64
import threading
import time
from dataclasses import dataclass

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from . import __version__
from .backend import ModelBackend, ProceduralBackend
from .codec import decode_noise_png, decode_rgba_png, encode_noise_png, encode_rgba_png
from .schemas import (
    GenerateViewsRequest,
    GenerateViewsResponse,
    HealthResponse,
    PredictNoiseRequest,
    PredictNoiseResponse,
    ViewpointSpec,
)


@dataclass
class ServiceConfig:
    resolution: int = 256
    max_concurrent: int = 2
    predict_deadline_s: float = 10.0
    generate_deadline_s: float = 120.0


def create_app(backend: ModelBackend | None = None, config: ServiceConfig | None = None,
               defer_load: bool = False) -> FastAPI:
    config = config or ServiceConfig()
    backend = backend or ProceduralBackend(resolution=config.resolution)
    app = FastAPI(title="prior-service", version=__version__)
    gate = threading.BoundedSemaphore(config.max_concurrent)
    state = {"ready": False}

    def load_models():
        backend.load()
        state["ready"] = True

    if not defer_load:
        load_models()
    app.state.load_models = load_models

    @app.exception_handler(RequestValidationError)
    async def schema_error(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    def require_ready():
        if not state["ready"]:
            raise HTTPException(status_code=503, detail="model backend still loading")

    def decode_or_422(decoder, b64: str, what: str):
        try:
            return decoder(base64.b64decode(b64, validate=True))
        except Exception as e:
            raise HTTPException(status_code=422, detail=f"cannot decode {what}: {e}") from e

    @app.get("/healthz", response_model=HealthResponse)
    def healthz():
        body = HealthResponse(
            status="ready" if state["ready"] else "loading",
            generator_model=backend.name_generator,
            noise_model=backend.name_noise,
            version=__version__,
        )
        if not state["ready"]:
            return JSONResponse(status_code=503, content=body.model_dump())
        return body

    @app.post("/v1/generate_views", response_model=GenerateViewsResponse)
    def generate_views(req: GenerateViewsRequest):
        require_ready()
        image = decode_or_422(decode_rgba_png, req.image_png_b64, "image_png_b64")
        with gate:
            views = [vp.model_dump() for vp in req.viewpoints]
            images = backend.generate_views(image, views, req.seed)
        return GenerateViewsResponse(
            images_png_b64=[base64.b64encode(encode_rgba_png(im)).decode() for im in images],
            viewpoints=req.viewpoints,
        )

    @app.post("/v1/predict_noise", response_model=PredictNoiseResponse)
    def predict_noise(req: PredictNoiseRequest):
        require_ready()
        noised = decode_or_422(decode_noise_png, req.noised_png_b64, "noised_png_b64")
        condition = decode_or_422(decode_rgba_png, req.condition_png_b64, "condition_png_b64")
        started = time.monotonic()
        with gate:
            try:
                noise = backend.predict_noise(
                    noised, req.t, condition, req.d_azimuth_deg, req.d_elevation_deg, req.seed
                )
            except ValueError as e:
                raise HTTPException(status_code=422, detail=str(e)) from e
        if time.monotonic() - started > config.predict_deadline_s:
            raise HTTPException(status_code=504, detail="predict deadline exceeded")
        return PredictNoiseResponse(
            noise_png_b64=base64.b64encode(encode_noise_png(noise)).decode()
        )

    return app


def main() -> None:
    import argparse

    import uvicorn

    parser = argparse.ArgumentParser(prog="prior-service")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8601)
    parser.add_argument("--resolution", type=int, default=256)
    parser.add_argument("--max-concurrent", type=int, default=2)
    args = parser.parse_args()
    app = create_app(config=ServiceConfig(resolution=args.resolution,
                                          max_concurrent=args.max_concurrent))
    uvicorn.run(app, host=args.host, port=args.port)


if __name__ == "__main__":
    main()
