"""
Event Pose Service
==================
HTTP front end for event-based object pose estimation: line detection,
correspondence-free initialization, robust tracking and trajectory
evaluation.

ERROR MAPPING:
- InputError      -> 400 (bad events, configs or trajectories)
- EstimationError -> 422 (valid input, no estimate could be produced)
- anything else   -> 500 with a generic body

Request bodies reuse the library's pydantic config models, so every field
has the same defaults and constraints as the command line.
"""

import logging
from typing import List, Optional

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field, model_validator

from config import BnbConfig, DetectionConfig, OptConfig, RunConfig, WindowConfig
from errors import ConfigError, EstimationError, InputError
from event_windowing import EventStream, cluster_events
from geometry import CameraIntrinsics, Pose, line_through
from line_detection import detect_lines
from matching import ObjectModel
from parameter_registry import ESTIMATOR_REGISTRY, parse_estimator
from pose_init import initial_pose
from pose_optimizer import track
from trajectory_metrics import Trajectory, ate_rmse


logger = logging.getLogger(__name__)

SERVICE_NAME = "Event Pose Service"
VERSION = "1.0.0"

app = FastAPI(
    title=SERVICE_NAME,
    description="Object pose estimation and tracking from event streams",
    version=VERSION,
)


# ============================================================================
# REQUEST/RESPONSE MODELS
# ============================================================================

class EventsPayload(BaseModel):
    """Column-wise events: seconds, pixels, polarity (+1/-1)."""
    t: List[float]
    x: List[float]
    y: List[float]
    polarity: Optional[List[int]] = None

    @model_validator(mode="after")
    def _equal_lengths(self):
        n = len(self.t)
        if len(self.x) != n or len(self.y) != n or (self.polarity is not None and len(self.polarity) != n):
            raise ValueError("t, x, y and polarity must have equal length")
        return self

    def to_stream(self) -> EventStream:
        return EventStream.from_arrays(self.t, self.x, self.y, self.polarity)


class LineOut(BaseModel):
    x1: float
    y1: float
    x2: float
    y2: float
    support: Optional[int] = None


class PosePayload(BaseModel):
    rotation: List[float] = Field(..., min_length=9, max_length=9, description="Row-major 3x3")
    translation: List[float] = Field(..., min_length=3, max_length=3)

    def to_pose(self) -> Pose:
        try:
            return Pose(rotation=self.rotation, translation=self.translation)
        except ValueError as e:
            raise ConfigError(f"Invalid pose: {e}") from e


class StampedPose(PosePayload):
    t: float


class DetectRequest(BaseModel):
    events: EventsPayload
    window_index: int = Field(0, ge=0)
    window: WindowConfig = Field(default_factory=WindowConfig)
    detection: DetectionConfig = Field(default_factory=DetectionConfig)


class DetectResponse(BaseModel):
    t_center: float
    lines: List[LineOut]


class InitRequest(BaseModel):
    lines: List[LineOut] = Field(..., min_length=1)
    model: ObjectModel
    intrinsics: CameraIntrinsics = Field(default_factory=CameraIntrinsics)
    bnb: BnbConfig = Field(default_factory=BnbConfig)


class InitResponse(BaseModel):
    rotation: List[float]
    translation: List[float]
    correspondences: List[List[int]]
    achieved_count: int
    mean_residual: float
    low_confidence: bool


class TrackRequest(BaseModel):
    events: EventsPayload
    model: ObjectModel
    intrinsics: CameraIntrinsics = Field(default_factory=CameraIntrinsics)
    estimator: str = "mm"
    config: RunConfig = Field(default_factory=RunConfig)
    start_pose: Optional[PosePayload] = None


class TrackRecordOut(StampedPose):
    coasting: bool
    n_events: int
    n_assigned: int
    n_rejected: int
    iterations: int
    cost: Optional[float]


class TrackResponse(BaseModel):
    estimator: str
    records: List[TrackRecordOut]
    coasting_count: int


class EvaluateRequest(BaseModel):
    estimated: List[StampedPose]
    truth: List[StampedPose]


class EvaluateResponse(BaseModel):
    rmse: float
    normalized_rmse: Optional[float]
    extent: float
    n_poses: int


def _trajectory(poses: List[StampedPose]) -> Trajectory:
    return Trajectory.from_poses([p.t for p in poses], [p.to_pose() for p in poses])


def _finite(value: float) -> Optional[float]:
    return value if value == value else None


# ============================================================================
# API ENDPOINTS
# ============================================================================

@app.get("/")
def root():
    """Health check endpoint."""
    return {"service": SERVICE_NAME, "status": "operational", "version": VERSION}


@app.get("/estimators")
def list_estimators():
    """List the registered robust estimators, their stages and default tuning constants."""
    defaults = OptConfig()
    estimators = [
        {
            "code": kind.value,
            "name": entry["name"],
            "stages": [
                {
                    "rule": stage["rule"],
                    "c": getattr(defaults, stage["c_field"]) if stage["c_field"] else None,
                    "frozen_scale": bool(stage.get("frozen_scale", False)),
                }
                for stage in entry["stages"]
            ],
        }
        for kind, entry in ESTIMATOR_REGISTRY.items()
    ]
    return {"estimators": estimators, "count": len(estimators)}


@app.post("/detect", response_model=DetectResponse)
def detect(request: DetectRequest):
    """Detect end-of-window image lines in one window of the event stream."""
    clusters = cluster_events(request.events.to_stream(), request.window)
    if request.window_index >= len(clusters):
        raise ConfigError(f"Window {request.window_index} out of range; stream has {len(clusters)} windows")
    cluster = clusters[request.window_index]
    lines = detect_lines(cluster, request.detection)
    return DetectResponse(t_center=cluster.t_center, lines=[LineOut(**d.to_dict()) for d in lines])


@app.post("/init", response_model=InitResponse)
def init(request: InitRequest):
    """Initial pose from detected lines, with no known correspondences."""
    observed = [line_through((l.x1, l.y1), (l.x2, l.y2)) for l in request.lines]
    result = initial_pose(observed, request.model, request.intrinsics, request.bnb)
    return InitResponse(**result.to_dict())


@app.post("/track", response_model=TrackResponse)
def track_events(request: TrackRequest):
    """Track the model through the events; one record per window."""
    kind = parse_estimator(request.estimator)
    start = request.start_pose.to_pose() if request.start_pose else None
    records = track(request.events.to_stream(), request.model, request.intrinsics, kind, request.config, start)
    return TrackResponse(
        estimator=kind.value,
        records=[
            TrackRecordOut(
                t=r.t_center,
                **r.pose.to_dict(),
                coasting=r.coasting,
                n_events=r.n_events,
                n_assigned=r.n_assigned,
                n_rejected=r.n_rejected,
                iterations=r.iterations,
                cost=_finite(r.cost),
            )
            for r in records
        ],
        coasting_count=sum(r.coasting for r in records),
    )


@app.post("/evaluate", response_model=EvaluateResponse)
def evaluate(request: EvaluateRequest):
    """Absolute trajectory error after rigid alignment."""
    result = ate_rmse(_trajectory(request.estimated), _trajectory(request.truth))
    return EvaluateResponse(
        rmse=result.rmse,
        normalized_rmse=_finite(result.normalized_rmse),
        extent=result.extent,
        n_poses=result.n_poses,
    )


# ============================================================================
# ERROR HANDLERS
# ============================================================================

@app.exception_handler(InputError)
async def input_error_handler(request, exc: InputError):
    return JSONResponse(status_code=400, content={"error": type(exc).__name__, "detail": str(exc)})


@app.exception_handler(EstimationError)
async def estimation_error_handler(request, exc: EstimationError):
    return JSONResponse(status_code=422, content={"error": type(exc).__name__, "detail": str(exc)})


@app.exception_handler(ValueError)
async def value_error_handler(request, exc: ValueError):
    return JSONResponse(status_code=400, content={"error": "InvalidInput", "detail": str(exc)})


@app.exception_handler(Exception)
async def global_exception_handler(request, exc):
    logger.exception("unhandled error on %s", request.url.path)
    return JSONResponse(
        status_code=500,
        content={
            "error": "Internal server error",
            "message": "Unable to process request.",
        },
    )


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8000)
