#!/usr/bin/env python3
"""Regenerate the shared wire-protocol fixtures under fixtures/wire/.

The fixtures pin the byte-level contract between the optimizer's HTTP client
and the prior service: canonical request bodies built by the client, and the
service's exact responses for them.  Both test suites consume the same files.
"""

import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))
sys.path.insert(0, str(ROOT / "service" / "src"))

from splatopt.camera import RelativeAngles
from splatopt.priors import build_generate_views_request, build_predict_noise_request

from fastapi.testclient import TestClient
from prior_service.app import ServiceConfig, create_app


def fixture_inputs():
    h = w = 8
    ys, xs = np.mgrid[0:h, 0:w]
    image = np.stack(
        [xs / (w - 1), ys / (h - 1), (xs + ys) / (w + h - 2), np.where(xs + ys > 3, 1.0, 0.0)],
        axis=-1,
    )
    noised = np.random.default_rng(123).standard_normal((h, w, 3))
    return {
        "image": image,
        "noised": noised,
        "t": 0.35,
        "d_azimuth_deg": -60.0,
        "d_elevation_deg": 30.0,
        "seed": 7,
        "viewpoints": [(20.0, 30.0), (-10.0, 90.0), (20.0, 150.0)],
    }


def main():
    out_dir = ROOT / "fixtures" / "wire"
    out_dir.mkdir(parents=True, exist_ok=True)
    inp = fixture_inputs()

    np.savez(
        out_dir / "inputs.npz",
        image=inp["image"],
        noised=inp["noised"],
        t=inp["t"],
        d_azimuth_deg=inp["d_azimuth_deg"],
        d_elevation_deg=inp["d_elevation_deg"],
        seed=inp["seed"],
        viewpoints=np.array(inp["viewpoints"]),
    )

    gv_req = build_generate_views_request(inp["image"], inp["viewpoints"], inp["seed"])
    pn_req = build_predict_noise_request(
        inp["noised"], inp["t"], inp["image"],
        RelativeAngles(inp["d_azimuth_deg"], inp["d_elevation_deg"]), inp["seed"],
    )
    (out_dir / "generate_views_request.json").write_bytes(gv_req)
    (out_dir / "predict_noise_request.json").write_bytes(pn_req)

    client = TestClient(create_app(config=ServiceConfig(resolution=8)))
    r1 = client.post("/v1/generate_views", content=gv_req,
                     headers={"Content-Type": "application/json"})
    r1.raise_for_status()
    (out_dir / "generate_views_response.json").write_bytes(r1.content)
    r2 = client.post("/v1/predict_noise", content=pn_req,
                     headers={"Content-Type": "application/json"})
    r2.raise_for_status()
    (out_dir / "predict_noise_response.json").write_bytes(r2.content)

    meta = {
        "description": "canonical request/response bytes for the prior-service wire protocol",
        "requests_built_by": "splatopt.priors.build_*_request",
        "responses_recorded_from": "prior_service.app (ProceduralBackend)",
        "inputs": "inputs.npz (deterministic construction, see make_wire_fixtures.py)",
    }
    (out_dir / "README.json").write_text(json.dumps(meta, indent=2))
    print(f"wrote fixtures to {out_dir}")


if __name__ == "__main__":
    main()
