"""Analytic parameter/FLOP counts and calibrated latency/energy estimates.

FLOPs follow the multiply-accumulate convention: one MAC counts as one
operation, bias adds and elementwise ops (ReLU, GRN, norms) are free.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .exceptions import ValidationError
from .search_space import SearchSpace, SubnetConfig, check_valid, representative_subnets

MLP_RATIO = 4
DW_KERNEL = 7


def convnext_block_params(d: int) -> int:
    """ConvNeXt-v2 block at width ``d``.

    7x7 depthwise conv, layer norm, d->4d pointwise, GRN over 4d, 4d->d pointwise.
    """
    hidden = MLP_RATIO * d
    dwconv = DW_KERNEL * DW_KERNEL * d + d
    norm = 2 * d
    pw1 = d * hidden + hidden
    grn = 2 * hidden
    pw2 = hidden * d + d
    return dwconv + norm + pw1 + grn + pw2


def convnext_block_macs(d: int, spatial: int) -> int:
    hidden = MLP_RATIO * d
    return spatial * (DW_KERNEL * DW_KERNEL * d + 2 * d * hidden)


def _downsample_layers(config: SubnetConfig, in_channels: int = 3):
    """Yield (stage, kernel, c_in, c_out, stride) for every downsample conv."""
    d1, d2, d3, d4 = config.dims
    yield 0, 3, in_channels, d1, 2
    yield 0, 3, d1, d1, 2
    yield 1, 3, d1, d2, 2
    yield 2, 1, d2, d3, 2
    yield 3, 1, d3, d4, 2


def count_params(
    space: SearchSpace, config: SubnetConfig, projector_dim: int | None = None
) -> int:
    check_valid(space, config)
    total = 0
    for _, k, c_in, c_out, _ in _downsample_layers(config):
        total += k * k * c_in * c_out + c_out
    # one norm per downsample block
    total += sum(2 * d for d in config.dims)
    for depth, d in zip(config.depths, config.dims):
        total += depth * convnext_block_params(d)
    if projector_dim:
        total += config.dims[-1] * projector_dim + projector_dim
    return total


def count_flops(
    space: SearchSpace,
    config: SubnetConfig,
    resolution: int | None = None,
    projector_dim: int | None = None,
) -> int:
    """MACs for one forward pass at ``resolution`` x ``resolution``."""
    check_valid(space, config)
    resolution = space.input_resolution if resolution is None else int(resolution)
    if resolution <= 0 or resolution % space.total_stride:
        raise ValidationError(
            f"resolution {resolution} is not divisible by the total stride {space.total_stride}"
        )
    side = resolution
    total = 0
    stage_side = []
    current_stage = -1
    for stage, k, c_in, c_out, stride in _downsample_layers(config):
        side //= stride
        total += side * side * k * k * c_in * c_out
        if stage != current_stage:
            stage_side.append(side)
            current_stage = stage
        else:
            stage_side[-1] = side
    for depth, d, s in zip(config.depths, config.dims, stage_side):
        total += depth * convnext_block_macs(d, s * s)
    if projector_dim:
        total += config.dims[-1] * projector_dim
    return total


@dataclass(frozen=True)
class CalibrationTable:
    """Anchor measurements plus affine fits on GFLOPs.

    ``latency = latency_fit[0] * gflops + latency_fit[1]`` and the same for
    energy. Anchor ids resolve by exact lookup before the fit is used.
    """

    anchors: tuple[tuple[str, float, float], ...]
    anchor_gflops: tuple[float, ...]
    latency_fit: tuple[float, float]
    energy_fit: tuple[float, float]
    _lookup: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        self._lookup.update({sid: (lat, en) for sid, lat, en in self.anchors})

    def lookup(self, subnet_id: str) -> tuple[float, float] | None:
        return self._lookup.get(subnet_id)


def _affine_fit(xs: list[float], ys: list[float]) -> tuple[float, float]:
    """Least-squares line with the slope clamped at zero."""
    n = len(xs)
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    sxx = math.fsum((x - mx) ** 2 for x in xs)
    if sxx == 0.0:
        return 0.0, my
    sxy = math.fsum((x - mx) * (y - my) for x, y in zip(xs, ys))
    slope = sxy / sxx
    if slope < 0.0:
        return 0.0, my
    return slope, my - slope * mx


def calibrate(
    anchors: Iterable[tuple[str, float, float]],
    space: SearchSpace,
    resolution: int | None = None,
    gflops: Mapping[str, float] | None = None,
) -> CalibrationTable:
    """Fit latency/energy against GFLOPs over at least two anchors.

    Anchor GFLOPs come from ``gflops`` when given, otherwise from
    :func:`count_flops` on the subnet the anchor id names.
    """
    anchors = tuple((str(s), float(lat), float(en)) for s, lat, en in anchors)
    if len(anchors) < 2:
        raise ValidationError("calibration needs at least 2 anchors")
    xs = []
    for sid, _, _ in anchors:
        if gflops is not None and sid in gflops:
            xs.append(float(gflops[sid]))
        else:
            xs.append(count_flops(space, SubnetConfig.from_id(sid), resolution) / 1e9)
    lat_fit = _affine_fit(xs, [a[1] for a in anchors])
    en_fit = _affine_fit(xs, [a[2] for a in anchors])
    return CalibrationTable(
        anchors=anchors, anchor_gflops=tuple(xs), latency_fit=lat_fit, energy_fit=en_fit
    )


def estimate(
    table: CalibrationTable, config: SubnetConfig, flops: float
) -> tuple[float, float]:
    """(latency_ms, energy_mj) for ``config`` running ``flops`` MACs."""
    hit = table.lookup(config.id)
    if hit is not None:
        return hit
    g = flops / 1e9
    a, b = table.latency_fit
    c, d = table.energy_fit
    return max(0.0, a * g + b), max(0.0, c * g + d)


def reference_anchors() -> list[tuple[str, float, float]]:
    """Measured latency (ms) / energy (mJ) of the five representative subnets."""
    measured = {
        "Min": (25.0, 1.2),
        "Tiny": (52.0, 2.4),
        "Small": (89.0, 4.1),
        "Base": (120.0, 5.5),
        "Large": (182.0, 8.4),
    }
    reps = representative_subnets()
    return [(reps[name].id, lat, en) for name, (lat, en) in measured.items()]


CALIBRATION_HEADER = ["subnet_id", "latency_ms", "energy_mj"]


def read_calibration_csv(path: str | Path) -> list[tuple[str, float, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames)[:3] != CALIBRATION_HEADER:
            raise ValidationError(
                f"calibration CSV must start with header {','.join(CALIBRATION_HEADER)}"
            )
        try:
            return [
                (row["subnet_id"], float(row["latency_ms"]), float(row["energy_mj"]))
                for row in reader
            ]
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"bad calibration row: {exc}") from exc


def load_calibration(
    path: str | Path, space: SearchSpace, resolution: int | None = None
) -> CalibrationTable:
    return calibrate(read_calibration_csv(path), space, resolution)


@dataclass(frozen=True)
class CostReport:
    subnet_id: str
    params: int
    flops: int
    resolution: int
    latency_ms: float | None = None
    energy_mj: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    CSV_FIELDS = ("subnet_id", "params", "flops", "resolution", "latency_ms", "energy_mj")

    def to_csv_row(self, header: bool = False) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        if header:
            writer.writerow(self.CSV_FIELDS)
        writer.writerow(
            ["" if getattr(self, f) is None else getattr(self, f) for f in self.CSV_FIELDS]
        )
        return buf.getvalue()


def report(
    space: SearchSpace,
    config: SubnetConfig,
    resolution: int | None = None,
    calibration: CalibrationTable | None = None,
    projector_dim: int | None = None,
) -> CostReport:
    resolution = space.input_resolution if resolution is None else int(resolution)
    params = count_params(space, config, projector_dim)
    flops = count_flops(space, config, resolution, projector_dim)
    latency = energy = None
    if calibration is not None:
        latency, energy = estimate(calibration, config, flops)
    return CostReport(config.id, params, flops, resolution, latency, energy)
