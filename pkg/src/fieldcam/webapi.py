"""HTTP face of the receiver: transmission listing, password-gated decode,
and the latest recovered image with cache-defeating headers.

The image endpoint accepts an arbitrary ``cb`` query parameter so browsers
can vary the URL per fetch; responses additionally carry no-store cache
headers, making repeated fetches return live bytes either way.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .errors import AuthFailed
from .receiver import ReceiverService

NO_CACHE_HEADERS = {
    "Cache-Control": "no-store, no-cache, must-revalidate, max-age=0",
    "Pragma": "no-cache",
    "Expires": "0",
}


class DecodeRequest(BaseModel):
    password: str


def create_app(service: ReceiverService,
               static_dir: Optional[Path] = None) -> FastAPI:
    app = FastAPI(title="fieldcam receiver")

    @app.get("/api/transmissions")
    def list_transmissions() -> list[dict]:
        return [r.to_json() for r in service.store.listing()]

    @app.post("/api/transmissions/{record_id}/decode")
    def decode(record_id: int, body: DecodeRequest) -> dict:
        record = service.store.get(record_id)
        if record is None:
            raise HTTPException(status_code=404, detail="unknown transmission")
        try:
            path = service.decode_and_decrypt(record_id, body.password)
        except AuthFailed:
            raise HTTPException(status_code=401, detail="wrong password")
        except (ValueError, RuntimeError) as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return {"id": record_id, "status": "decoded", "decoded_path": str(path)}

    @app.get("/api/images/latest")
    def latest_image(cb: str | None = None) -> Response:
        data = service.latest_image_bytes()
        if data is None:
            raise HTTPException(status_code=404, detail="nothing decoded yet")
        return Response(content=data, media_type="image/jpeg",
                        headers=NO_CACHE_HEADERS)

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True),
                  name="dashboard")

    return app
