"""JSON interchange files: datasets, detections, models, reports."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from .errors import InvalidArgumentError, OsadError
from .evaluation import Detection
from .geometry import Box
from .pcl import UNKNOWN


def write_json(path: str | Path, payload: Any, indent: int | None = None) -> Path:
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(payload, indent=indent) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OsadError(f"cannot write {p}: {exc.strerror}") from exc
    return p


def read_json(path: str | Path) -> Any:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidArgumentError(f"cannot read {p}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{p} is not valid JSON: {exc}") from exc


def detections_to_json(dets: list[Detection]) -> dict:
    return {
        "detections": [
            {
                "scene": d.scene,
                "box": d.box.as_list(),
                "label": "unknown" if d.label == UNKNOWN else d.label,
                "score": d.score,
            }
            for d in dets
        ]
    }


def detections_from_json(data: dict) -> list[Detection]:
    try:
        rows = data["detections"]
        return [
            Detection(
                Box.from_list(r["box"]),
                UNKNOWN if r["label"] == "unknown" else int(r["label"]),
                float(r["score"]),
                str(r["scene"]),
            )
            for r in rows
        ]
    except (KeyError, TypeError) as exc:
        raise InvalidArgumentError(f"malformed detections file: {exc}") from exc
