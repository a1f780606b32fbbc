"""Pydantic request/response models for the wire protocol."""

from __future__ import annotations

from pydantic import BaseModel, Field


class ViewpointSpec(BaseModel):
    elevation_deg: float = Field(ge=-90.0, le=90.0)
    azimuth_deg: float


class GenerateViewsRequest(BaseModel):
    image_png_b64: str
    viewpoints: list[ViewpointSpec] = Field(min_length=1)
    seed: int = 0


class GenerateViewsResponse(BaseModel):
    images_png_b64: list[str]
    viewpoints: list[ViewpointSpec]


class PredictNoiseRequest(BaseModel):
    noised_png_b64: str
    t: float = Field(gt=0.0, lt=1.0)
    condition_png_b64: str
    d_azimuth_deg: float
    d_elevation_deg: float
    seed: int = 0


class PredictNoiseResponse(BaseModel):
    noise_png_b64: str


class HealthResponse(BaseModel):
    status: str
    generator_model: str
    noise_model: str
    version: str
