"""HTTP service hosting the interactive annotation and segmentation flow.

Endpoints (all JSON unless noted):

    GET  /cases                              case listing
    GET  /cases/{id}/slice/{z}               windowed 8-bit PNG of one CT slice
    GET  /cases/{id}/annotation/{target}     stored annotation, byte-identical
    PUT  /cases/{id}/annotation/{target}     validate + persist an outline
    POST /cases/{id}/segment                 start async prediction, -> job id
    GET  /jobs/{id}                          job status
    GET  /cases/{id}/overlay/{z}             CT slice with label overlay PNG

Annotations and predictions are persisted beside the manifest; source
volumes are never touched. At most one segmentation job per case runs at
a time; a second request while one is active returns the existing job.
"""

from __future__ import annotations

import dataclasses
import io
import json
import os
import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from PIL import Image

from geoforest.errors import AnnotationError
from geoforest.features import IntegralStack
from geoforest.forest import Forest, load_forest, worker_count
from geoforest.geodesic import TARGETS, SeedAnnotation, annotation_from_dict
from geoforest.pipeline import (
    MODE_BASELINE,
    MODE_GEODESIC,
    CaseData,
    CaseRecord,
    PipelineConfig,
    build_stack,
    load_manifest,
    run_prediction,
)
from geoforest.volume import LabelVolume, Volume3, read_label_mhd, read_mhd

JOB_PENDING = "PENDING"
JOB_RUNNING = "RUNNING"
JOB_DONE = "DONE"
JOB_FAILED = "FAILED"

OVERLAY_COLORS = {1: (255, 60, 60), 2: (70, 110, 255)}  # right red, left blue
OVERLAY_ALPHA = 0.5


@dataclasses.dataclass
class Job:
    job_id: str
    case_id: str
    status: str = JOB_PENDING
    error: str | None = None

    def to_dict(self) -> dict:
        return {"job_id": self.job_id, "case_id": self.case_id,
                "status": self.status, "error": self.error}


class SegmentationService:
    """Session state and the segmentation job runner."""

    def __init__(self, manifest_path: str, model_path: str | None = None,
                 config: PipelineConfig | None = None):
        self.manifest_path = os.path.abspath(manifest_path)
        self.store_dir = os.path.dirname(self.manifest_path)
        self.cases: dict[str, CaseRecord] = {
            c.case_id: c for c in load_manifest(self.manifest_path)}
        self.forest: Forest | None = load_forest(model_path) if model_path else None
        config = config or PipelineConfig()
        if self.forest is not None:
            mode = (MODE_BASELINE if len(self.forest.channel_names) == 1
                    else MODE_GEODESIC)
            config = dataclasses.replace(config, mode=mode)
        self.config = config
        self._volumes: dict[str, Volume3] = {}
        self._annotations: dict[str, dict[str, tuple[SeedAnnotation, bytes]]] = {
            cid: {} for cid in self.cases}
        self._predictions: dict[str, LabelVolume] = {}
        self._jobs: dict[str, Job] = {}
        self._active_job: dict[str, str] = {}
        self._job_counter = 0
        self._lock = threading.Lock()
        self._executor = ThreadPoolExecutor(max_workers=worker_count())
        self._restore_persisted()

    # -- persistence ------------------------------------------------------

    def _annotation_path(self, case_id: str, target: str) -> str:
        return os.path.join(self.store_dir, f"{case_id}.{target}.annotation.json")

    def _prediction_path(self, case_id: str) -> str:
        return os.path.join(self.store_dir, f"{case_id}.prediction.mhd")

    def _restore_persisted(self) -> None:
        for cid, case in self.cases.items():
            for target in TARGETS:
                path = self._annotation_path(cid, target)
                if os.path.exists(path):
                    raw = open(path, "rb").read()
                    try:
                        ann = annotation_from_dict(json.loads(raw),
                                                   self.volume(cid).dims)
                    except (AnnotationError, ValueError):
                        continue
                    self._annotations[cid][target] = (ann, raw)
            pred = self._prediction_path(cid)
            if os.path.exists(pred):
                self._predictions[cid] = read_label_mhd(pred)

    # -- state access -----------------------------------------------------

    def volume(self, case_id: str) -> Volume3:
        if case_id not in self._volumes:
            self._volumes[case_id] = read_mhd(self.cases[case_id].ct_path)
        return self._volumes[case_id]

    def store_annotation(self, case_id: str, target: str, raw: bytes) -> SeedAnnotation:
        obj = json.loads(raw)
        if obj.get("target") != target:
            raise AnnotationError(
                f"annotation declares target {obj.get('target')!r} but was "
                f"uploaded for {target!r}")
        ann = annotation_from_dict(obj, self.volume(case_id).dims)
        with self._lock:
            self._annotations[case_id][target] = (ann, raw)
        with open(self._annotation_path(case_id, target), "wb") as fh:
            fh.write(raw)
        return ann

    def annotation_bytes(self, case_id: str, target: str) -> bytes | None:
        entry = self._annotations[case_id].get(target)
        return entry[1] if entry else None

    def case_annotations(self, case_id: str) -> dict[str, SeedAnnotation]:
        return {t: e[0] for t, e in self._annotations[case_id].items()}

    def prediction(self, case_id: str) -> LabelVolume | None:
        return self._predictions.get(case_id)

    # -- jobs --------------------------------------------------------------

    def submit_segmentation(self, case_id: str) -> Job:
        with self._lock:
            active_id = self._active_job.get(case_id)
            if active_id:
                active = self._jobs[active_id]
                if active.status in (JOB_PENDING, JOB_RUNNING):
                    return active
            self._job_counter += 1
            job = Job(f"job-{self._job_counter:04d}", case_id)
            self._jobs[job.job_id] = job
            self._active_job[case_id] = job.job_id
        self._executor.submit(self._run_job, job)
        return job

    def job(self, job_id: str) -> Job | None:
        return self._jobs.get(job_id)

    def _run_job(self, job: Job) -> None:
        job.status = JOB_RUNNING
        try:
            case = self.cases[job.case_id]
            annotations = self.case_annotations(job.case_id)
            stack = build_stack(case, self.config, ct=self.volume(job.case_id),
                                annotations=annotations)
            data = CaseData(case, stack, IntegralStack(stack), annotations)
            labels = run_prediction(case, self.forest, self.config,
                                    case_data=data,
                                    prediction_path=self._prediction_path(job.case_id))
            with self._lock:
                self._predictions[job.case_id] = labels
            job.status = JOB_DONE
        except Exception as exc:  # surface anything to the client
            job.error = f"{type(exc).__name__}: {exc}"
            job.status = JOB_FAILED

    # -- rendering ----------------------------------------------------------

    def window_slice(self, case_id: str, z: int) -> np.ndarray:
        vol = self.volume(case_id)
        lo, hi = self.config.window
        win = np.clip((vol.data[:, :, z] - lo) / (hi - lo), 0.0, 1.0)
        return (win * 255.0 + 0.5).astype(np.uint8)

    def slice_png(self, case_id: str, z: int) -> bytes:
        gray = self.window_slice(case_id, z)
        img = Image.fromarray(gray.T, mode="L")
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return buf.getvalue()

    def overlay_png(self, case_id: str, z: int) -> bytes:
        gray = self.window_slice(case_id, z).astype(np.float64)
        rgb = np.stack([gray, gray, gray], axis=-1)
        labels = self._predictions[case_id].labels[:, :, z]
        for class_id, color in OVERLAY_COLORS.items():
            mask = labels == class_id
            for c in range(3):
                channel = rgb[:, :, c]
                channel[mask] = ((1 - OVERLAY_ALPHA) * channel[mask]
                                 + OVERLAY_ALPHA * color[c])
        img = Image.fromarray(np.transpose(rgb.astype(np.uint8), (1, 0, 2)),
                              mode="RGB")
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return buf.getvalue()


def create_app(service: SegmentationService,
               frontend_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="geoforest annotation service")
    app.state.service = service

    def not_found(detail: str) -> JSONResponse:
        return JSONResponse({"detail": detail}, status_code=404)

    def check_case(case_id: str) -> str | None:
        return None if case_id in service.cases else f"unknown case {case_id!r}"

    @app.get("/cases")
    def list_cases():
        out = []
        for cid, case in sorted(service.cases.items()):
            vol = service.volume(cid)
            anns = service.case_annotations(cid)
            out.append({
                "case_id": cid,
                "dims": list(vol.dims),
                "spacing": list(vol.spacing),
                "has_ground_truth": bool(case.ground_truth_path),
                "annotations": {t: (t in anns) for t in TARGETS},
                "has_prediction": service.prediction(cid) is not None,
            })
        return out

    @app.get("/cases/{case_id}/slice/{z}")
    def get_slice(case_id: str, z: int):
        if (err := check_case(case_id)):
            return not_found(err)
        if not 0 <= z < service.volume(case_id).dims[2]:
            return not_found(f"slice {z} out of range")
        return Response(service.slice_png(case_id, z), media_type="image/png")

    @app.get("/cases/{case_id}/annotation/{target}")
    def get_annotation(case_id: str, target: str):
        if (err := check_case(case_id)) or target not in TARGETS:
            return not_found(err or f"unknown target {target!r}")
        raw = service.annotation_bytes(case_id, target)
        if raw is None:
            return not_found(f"no {target} annotation for {case_id}")
        return Response(raw, media_type="application/json")

    @app.put("/cases/{case_id}/annotation/{target}")
    async def put_annotation(case_id: str, target: str, request: Request):
        if (err := check_case(case_id)) or target not in TARGETS:
            return not_found(err or f"unknown target {target!r}")
        raw = await request.body()
        try:
            ann = service.store_annotation(case_id, target, raw)
        except (AnnotationError, ValueError) as exc:
            return JSONResponse({"detail": str(exc)}, status_code=422)
        return {"case_id": case_id, "target": target, "slice_z": ann.slice_z,
                "mask_voxels": int(ann.mask.sum())}

    @app.post("/cases/{case_id}/segment")
    def post_segment(case_id: str):
        if (err := check_case(case_id)):
            return not_found(err)
        anns = service.case_annotations(case_id)
        missing = [t for t in TARGETS if t not in anns]
        if service.config.mode == MODE_GEODESIC and missing:
            return JSONResponse(
                {"detail": f"missing annotation(s): {', '.join(missing)}"},
                status_code=409)
        if service.forest is None:
            return JSONResponse(
                {"detail": "no model loaded; start the service with --model"},
                status_code=409)
        return service.submit_segmentation(case_id).to_dict()

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        job = service.job(job_id)
        if job is None:
            return not_found(f"unknown job {job_id!r}")
        return job.to_dict()

    @app.get("/cases/{case_id}/overlay/{z}")
    def get_overlay(case_id: str, z: int):
        if (err := check_case(case_id)):
            return not_found(err)
        if not 0 <= z < service.volume(case_id).dims[2]:
            return not_found(f"slice {z} out of range")
        if service.prediction(case_id) is None:
            return not_found(f"no prediction available for {case_id}")
        return Response(service.overlay_png(case_id, z), media_type="image/png")

    if frontend_dir and os.path.isdir(frontend_dir):
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=frontend_dir, html=True),
                  name="frontend")

    return app
