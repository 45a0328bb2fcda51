"""Event-driven simulation of the edge/cloud loop.

Frames arrive at a fixed period and each one runs the currently active
subnet. The agent re-runs selection whenever the scene changes and on every
cadence tick; a change of subnet charges the configured switch cost once.
Time is simulated only.
"""

from __future__ import annotations

import csv
import heapq
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .cost_model import CalibrationTable
from .exceptions import ValidationError
from .search_space import SearchSpace, SubnetConfig, default_space, representative_subnets
from .selector import (
    AccuracyProfile,
    CostCache,
    SelectionRequest,
    metric_value,
    select_subnet,
)

# event priorities at equal timestamps: select before the frame it governs
_SEGMENT, _TICK, _FRAME = 0, 1, 2


@dataclass(frozen=True)
class SceneTimeline:
    segments: tuple[tuple[str, int], ...]
    frame_period_ms: float = 500.0

    def __post_init__(self):
        segments = tuple((str(s), int(n)) for s, n in self.segments)
        if not segments:
            raise ValidationError("timeline has no segments")
        for scene, frames in segments:
            if frames <= 0:
                raise ValidationError(f"segment {scene!r} has {frames} frames")
        if not self.frame_period_ms > 0:
            raise ValidationError("frame period must be positive")
        object.__setattr__(self, "segments", segments)

    @property
    def total_frames(self) -> int:
        return sum(n for _, n in self.segments)

    @property
    def scenes(self) -> list[str]:
        return list(dict.fromkeys(s for s, _ in self.segments))

    @classmethod
    def from_dict(cls, doc: dict) -> SceneTimeline:
        try:
            return cls(
                tuple((seg["scene"], seg["frames"]) for seg in doc["segments"]),
                float(doc.get("frame_period_ms", 500.0)),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed timeline document: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "frame_period_ms": self.frame_period_ms,
            "segments": [{"scene": s, "frames": n} for s, n in self.segments],
        }


def load_timeline(path: str | Path) -> SceneTimeline:
    with open(path, encoding="utf-8") as fh:
        return SceneTimeline.from_dict(json.load(fh))


@dataclass(frozen=True)
class SimConfig:
    alpha: float = 0.95
    agent_cadence_s: float = 300.0
    switch_latency_ms: float = 0.0
    switch_energy_mj: float = 0.0
    cost_metric: str = "flops"
    deadline_ms: float = 1000.0
    candidates: tuple[SubnetConfig, ...] = ()

    def __post_init__(self):
        if not self.agent_cadence_s > 0:
            raise ValidationError("agent cadence must be positive")
        if self.switch_latency_ms < 0 or self.switch_energy_mj < 0:
            raise ValidationError("switch costs must be nonnegative")
        if not 0 < self.alpha <= 1:
            raise ValidationError("alpha must lie in (0, 1]")
        if not self.candidates:
            object.__setattr__(self, "candidates", tuple(representative_subnets().values()))


@dataclass(frozen=True)
class SegmentRow:
    index: int
    scene: str
    subnet_id: str
    frames: int
    total_flops: int
    total_latency_ms: float
    total_energy_mj: float
    accuracy_sum: float
    switches: int
    selector_calls: int
    deadline_violations: int


@dataclass(frozen=True)
class FrameRecord:
    frame: int
    time_ms: float
    scene: str
    subnet_id: str
    flops: int
    latency_ms: float
    energy_mj: float
    accuracy: float


@dataclass(frozen=True)
class SimReport:
    alpha: float
    frames: int
    total_flops: int
    total_latency_ms: float
    total_energy_mj: float
    avg_flops_per_frame: float
    avg_latency_ms: float
    avg_energy_mj: float
    avg_accuracy: float
    subnet_switches: int
    selector_calls: int
    deadline_violations: int
    per_segment: tuple[SegmentRow, ...]
    frame_trace: tuple[FrameRecord, ...] = field(default=(), repr=False)

    def to_dict(self, include_frames: bool = False) -> dict:
        doc = asdict(self)
        doc["per_segment"] = [asdict(r) for r in self.per_segment]
        if include_frames:
            doc["frame_trace"] = [asdict(f) for f in self.frame_trace]
        else:
            doc.pop("frame_trace")
        return doc

    def to_json(self, include_frames: bool = False) -> str:
        return json.dumps(self.to_dict(include_frames), sort_keys=True, indent=2)


class _Segment:
    __slots__ = ("scene", "subnet", "frames", "flops", "lat", "energy", "acc", "switches", "calls", "late")

    def __init__(self, scene: str):
        self.scene = scene
        self.subnet = None
        self.frames = 0
        self.flops = 0
        self.lat: list[float] = []
        self.energy: list[float] = []
        self.acc: list[float] = []
        self.switches = 0
        self.calls = 0
        self.late = 0


def run_sim(
    timeline: SceneTimeline,
    profile: AccuracyProfile,
    calibration: CalibrationTable,
    space: SearchSpace | None = None,
    config: SimConfig | None = None,
    record_frames: bool = False,
) -> SimReport:
    config = config or SimConfig()
    space = space or default_space()
    profile.require(timeline.scenes, [c.id for c in config.candidates])
    costs = CostCache(space, calibration)

    # per-frame cost of each candidate never changes within a run
    per_frame = {}
    for c in config.candidates:
        r = costs(c)
        per_frame[c.id] = (r.flops, r.latency_ms, r.energy_mj)

    period = timeline.frame_period_ms
    cadence_ms = config.agent_cadence_s * 1000.0
    total_ms = timeline.total_frames * period

    events: list[tuple[float, int, int, object]] = []
    seq = 0
    frame = 0
    for index, (scene, frames) in enumerate(timeline.segments):
        heapq.heappush(events, (frame * period, _SEGMENT, seq, index))
        seq += 1
        for _ in range(frames):
            heapq.heappush(events, (frame * period, _FRAME, seq, (frame, index)))
            seq += 1
            frame += 1
    tick = 1
    while tick * cadence_ms < total_ms:
        heapq.heappush(events, (tick * cadence_ms, _TICK, seq, None))
        seq += 1
        tick += 1

    segments = [_Segment(scene) for scene, _ in timeline.segments]
    active: SubnetConfig | None = None
    current = 0
    trace = []

    def run_selector(seg: _Segment) -> None:
        nonlocal active
        req = SelectionRequest(seg.scene, config.alpha, config.cost_metric, config.candidates)
        chosen = select_subnet(profile, req, costs).chosen
        seg.calls += 1
        if active is not None and chosen.id != active.id:
            seg.switches += 1
            seg.lat.append(config.switch_latency_ms)
            seg.energy.append(config.switch_energy_mj)
        active = chosen
        seg.subnet = chosen.id

    while events:
        time_ms, kind, _, payload = heapq.heappop(events)
        if kind == _SEGMENT:
            current = payload
            run_selector(segments[current])
        elif kind == _TICK:
            run_selector(segments[current])
        else:
            frame_idx, index = payload
            seg = segments[index]
            flops, lat, energy = per_frame[active.id]
            acc = profile.accuracy(seg.scene, active.id)
            seg.frames += 1
            seg.flops += flops
            seg.lat.append(lat)
            seg.energy.append(energy)
            seg.acc.append(acc)
            if lat > config.deadline_ms:
                seg.late += 1
            if record_frames:
                trace.append(
                    FrameRecord(frame_idx, time_ms, seg.scene, active.id, flops, lat, energy, acc)
                )

    rows = tuple(
        SegmentRow(
            index=i,
            scene=s.scene,
            subnet_id=s.subnet,
            frames=s.frames,
            total_flops=s.flops,
            total_latency_ms=math.fsum(s.lat),
            total_energy_mj=math.fsum(s.energy),
            accuracy_sum=math.fsum(s.acc),
            switches=s.switches,
            selector_calls=s.calls,
            deadline_violations=s.late,
        )
        for i, s in enumerate(segments)
    )
    n = timeline.total_frames
    total_flops = sum(s.flops for s in segments)
    total_lat = math.fsum(x for s in segments for x in s.lat)
    total_energy = math.fsum(x for s in segments for x in s.energy)
    total_acc = math.fsum(x for s in segments for x in s.acc)
    return SimReport(
        alpha=config.alpha,
        frames=n,
        total_flops=total_flops,
        total_latency_ms=total_lat,
        total_energy_mj=total_energy,
        avg_flops_per_frame=total_flops / n,
        avg_latency_ms=total_lat / n,
        avg_energy_mj=total_energy / n,
        avg_accuracy=total_acc / n,
        subnet_switches=sum(s.switches for s in segments),
        selector_calls=sum(s.calls for s in segments),
        deadline_violations=sum(s.late for s in segments),
        per_segment=rows,
        frame_trace=tuple(trace),
    )


@dataclass(frozen=True)
class CurvePoint:
    alpha: float
    avg_cost: float
    avg_accuracy: float
    avg_flops: float
    avg_latency_ms: float
    avg_energy_mj: float


CURVE_HEADER = ("alpha", "avg_flops", "avg_latency_ms", "avg_energy_mj", "avg_accuracy")


def tradeoff_curve(
    timeline: SceneTimeline,
    profile: AccuracyProfile,
    calibration: CalibrationTable,
    space: SearchSpace | None = None,
    alphas: Sequence[float] = (),
    base: SimConfig | None = None,
) -> list[CurvePoint]:
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise ValidationError("no alphas given")
    if alphas != sorted(alphas):
        raise ValidationError("alphas must be sorted ascending")
    base = base or SimConfig()
    points = []
    for alpha in alphas:
        cfg = SimConfig(
            alpha=alpha,
            agent_cadence_s=base.agent_cadence_s,
            switch_latency_ms=base.switch_latency_ms,
            switch_energy_mj=base.switch_energy_mj,
            cost_metric=base.cost_metric,
            deadline_ms=base.deadline_ms,
            candidates=base.candidates,
        )
        rep = run_sim(timeline, profile, calibration, space, cfg)
        cost = {
            "flops": rep.avg_flops_per_frame,
            "latency": rep.avg_latency_ms,
            "energy": rep.avg_energy_mj,
        }.get(base.cost_metric)
        if cost is None:
            # params has no per-frame total; average the active model size instead
            cost = _avg_params(rep, space or default_space(), base.candidates)
        points.append(
            CurvePoint(
                alpha,
                cost,
                rep.avg_accuracy,
                rep.avg_flops_per_frame,
                rep.avg_latency_ms,
                rep.avg_energy_mj,
            )
        )
    return points


def _avg_params(rep: SimReport, space: SearchSpace, candidates) -> float:
    costs = CostCache(space)
    by_id = {c.id: c for c in candidates}
    total = sum(r.frames * metric_value(costs(by_id[r.subnet_id]), "params") for r in rep.per_segment)
    return total / rep.frames


def curve_to_csv(points: Sequence[CurvePoint]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CURVE_HEADER)
    for p in points:
        writer.writerow(
            [repr(p.alpha), repr(p.avg_flops), repr(p.avg_latency_ms), repr(p.avg_energy_mj), repr(p.avg_accuracy)]
        )
    return buf.getvalue()
