"""Scene-aware subnet selection under an accuracy tolerance.

For a scene S and tolerance alpha, the reference accuracy is the best
accuracy any candidate reaches on S; the chosen subnet is the cheapest
candidate whose accuracy on S is at least ``alpha`` times that reference.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .agent_protocol.parsing import normalize_scene
from .cost_model import CalibrationTable, CostReport, report
from .embedding_engine import EmbeddingBank, similarity_matrix
from .exceptions import ValidationError
from .search_space import SearchSpace, SubnetConfig, default_space, representative_subnets

COST_METRICS = ("flops", "latency", "energy", "params")


@dataclass(frozen=True)
class AccuracyProfile:
    """Acc(subnet, scene) lookup, stored as fractions in [0, 1]."""

    table: Mapping[tuple[str, str], float]
    metric_name: str = "accuracy"
    scenes: tuple[str, ...] = field(default=())

    def __post_init__(self):
        table = {(str(s), str(m)): float(a) for (s, m), a in self.table.items()}
        for key, acc in table.items():
            if not 0.0 <= acc <= 1.0:
                raise ValidationError(f"accuracy {acc} for {key} outside [0, 1]")
        scenes = tuple(self.scenes) or tuple(dict.fromkeys(s for s, _ in table))
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "scenes", scenes)

    @classmethod
    def from_rows(cls, rows, metric_name: str = "accuracy") -> AccuracyProfile:
        """Rows of (scene, subnet_id, accuracy); percent inputs are detected and scaled."""
        rows = [(str(s), str(m), float(a)) for s, m, a in rows]
        if not rows:
            raise ValidationError("accuracy profile has no rows")
        seen = set()
        for s, m, _ in rows:
            if (s, m) in seen:
                raise ValidationError(f"duplicate profile entry ({s}, {m})")
            seen.add((s, m))
        scale = 100.0 if any(a > 1.0 for _, _, a in rows) else 1.0
        table = {(s, m): a / scale for s, m, a in rows}
        return cls(table, metric_name)

    def subnet_ids(self, scene: str) -> list[str]:
        return [m for s, m in self.table if s == scene]

    def accuracy(self, scene: str, subnet_id: str) -> float:
        try:
            return self.table[(scene, subnet_id)]
        except KeyError:
            raise ValidationError(
                f"accuracy profile has no entry for scene {scene!r}, subnet {subnet_id!r}"
            ) from None

    def require(self, scenes: Sequence[str], subnet_ids: Sequence[str]) -> None:
        holes = [(s, m) for s in scenes for m in subnet_ids if (s, m) not in self.table]
        if holes:
            s, m = holes[0]
            raise ValidationError(
                f"accuracy profile missing {len(holes)} entries, first ({s!r}, {m!r})"
            )

    def scaled(self, scene: str, factor: float) -> AccuracyProfile:
        """Copy with one scene's accuracies multiplied by ``factor``."""
        if factor <= 0:
            raise ValidationError("scale factor must be positive")
        table = {
            key: (acc * factor if key[0] == scene else acc) for key, acc in self.table.items()
        }
        return AccuracyProfile(table, self.metric_name, self.scenes)


PROFILE_HEADER = ["scene", "subnet_id", "accuracy"]


def load_profile(path: str | Path, metric_name: str | None = None) -> AccuracyProfile:
    """Read a ``scene,subnet_id,accuracy`` CSV; subnet ids may be representative names."""
    from .search_space import resolve_subnet

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames)[:3] != PROFILE_HEADER:
            raise ValidationError(f"profile CSV must start with header {','.join(PROFILE_HEADER)}")
        try:
            rows = [
                (r["scene"], resolve_subnet(r["subnet_id"]).id, float(r["accuracy"]))
                for r in reader
            ]
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"bad profile row: {exc}") from exc
    return AccuracyProfile.from_rows(rows, metric_name or Path(path).stem)


def nearest_scene(
    query,
    scene_bank: EmbeddingBank,
    embed: Callable[[str], np.ndarray] | None = None,
) -> str:
    """Most similar known scene; exact (normalized) name matches short-circuit."""
    if len(scene_bank) == 0:
        raise ValidationError("scene bank is empty")
    if isinstance(query, str):
        key = normalize_scene(query)
        for label in scene_bank.labels:
            if normalize_scene(label) == key:
                return label
        if embed is None:
            raise ValidationError(f"unknown scene {query!r} and no embedding available")
        query = embed(query)
    sims = similarity_matrix(query, scene_bank)[0]
    return scene_bank.labels[int(np.argmax(sims))]


@dataclass(frozen=True)
class SelectionRequest:
    scene: str
    alpha: float
    cost_metric: str = "flops"
    candidates: tuple[SubnetConfig, ...] = ()

    def __post_init__(self):
        alpha = float(self.alpha)
        if alpha > 1.0:
            raise ValidationError(f"alpha must be at most 1, got {alpha}")
        if not alpha > 0.0:
            raise ValidationError(f"alpha must be positive, got {alpha}")
        if self.cost_metric not in COST_METRICS:
            raise ValidationError(f"cost metric must be one of {COST_METRICS}")
        candidates = tuple(self.candidates) or tuple(representative_subnets().values())
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "candidates", candidates)


@dataclass(frozen=True)
class SelectionResult:
    chosen: SubnetConfig
    matched_scene: str
    threshold: float
    achieved_accuracy: float
    cost: float
    cost_metric: str = "flops"

    def to_dict(self) -> dict:
        return {
            "chosen": self.chosen.id,
            "depths": list(self.chosen.depths),
            "dims": list(self.chosen.dims),
            "matched_scene": self.matched_scene,
            "threshold": self.threshold,
            "achieved_accuracy": self.achieved_accuracy,
            "cost": self.cost,
            "cost_metric": self.cost_metric,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def metric_value(cost: CostReport, metric: str) -> float:
    if metric == "flops":
        return float(cost.flops)
    if metric == "params":
        return float(cost.params)
    value = cost.latency_ms if metric == "latency" else cost.energy_mj
    if value is None:
        raise ValidationError(f"cost metric {metric!r} needs a calibration table")
    return float(value)


class CostCache:
    """Memoized cost reports for one (space, calibration, resolution)."""

    def __init__(
        self,
        space: SearchSpace | None = None,
        calibration: CalibrationTable | None = None,
        resolution: int | None = None,
    ):
        self.space = space or default_space()
        self.calibration = calibration
        self.resolution = resolution
        self._reports: dict[str, CostReport] = {}

    def __call__(self, config: SubnetConfig) -> CostReport:
        hit = self._reports.get(config.id)
        if hit is None:
            hit = report(self.space, config, self.resolution, self.calibration)
            self._reports[config.id] = hit
        return hit


def _resolve_scene(profile: AccuracyProfile, scene: str, scene_bank, embed) -> str:
    if scene in profile.scenes:
        return scene
    key = normalize_scene(scene)
    for s in profile.scenes:
        if normalize_scene(s) == key:
            return s
    if scene_bank is None:
        raise ValidationError(f"scene {scene!r} not in profile and no scene bank given")
    return nearest_scene(scene, scene_bank, embed)


def select_subnet(
    profile: AccuracyProfile,
    request: SelectionRequest,
    costs: Callable[[SubnetConfig], CostReport] | None = None,
    scene_bank: EmbeddingBank | None = None,
    embed: Callable[[str], np.ndarray] | None = None,
) -> SelectionResult:
    costs = costs or CostCache()
    scene = _resolve_scene(profile, request.scene, scene_bank, embed)
    accs = [profile.accuracy(scene, c.id) for c in request.candidates]
    max_acc = max(accs)
    threshold = request.alpha * max_acc
    feasible = [
        (metric_value(costs(c), request.cost_metric), costs(c).params, c.id, c, a)
        for c, a in zip(request.candidates, accs)
        if a >= threshold
    ]
    cost, _, _, chosen, acc = min(feasible, key=lambda t: t[:3])
    return SelectionResult(chosen, scene, threshold, acc, cost, request.cost_metric)


@dataclass(frozen=True)
class SweepTable:
    alphas: tuple[float, ...]
    subnet_ids: tuple[str, ...]
    fractions: tuple[tuple[float, ...], ...]
    names: Mapping[str, str] = field(default_factory=dict)

    def row(self, alpha: float) -> dict[str, float]:
        i = self.alphas.index(alpha)
        return dict(zip(self.subnet_ids, self.fractions[i]))

    def to_dict(self) -> dict:
        return {
            "alphas": list(self.alphas),
            "subnets": [self.names.get(s, s) for s in self.subnet_ids],
            "subnet_ids": list(self.subnet_ids),
            "fractions": [list(r) for r in self.fractions],
        }

    def to_csv(self) -> str:
        header = ["alpha", *(self.names.get(s, s) for s in self.subnet_ids)]
        lines = [",".join(header)]
        for a, row in zip(self.alphas, self.fractions):
            lines.append(",".join([repr(a), *(repr(f) for f in row)]))
        return "\n".join(lines) + "\n"


def sweep_alpha(
    profile: AccuracyProfile,
    scenes: Sequence[str] | None,
    alphas: Sequence[float],
    cost_metric: str = "flops",
    candidates: Sequence[SubnetConfig] | None = None,
    costs: Callable[[SubnetConfig], CostReport] | None = None,
) -> SweepTable:
    """Fraction of scenes choosing each candidate, one row per alpha."""
    alphas = [float(a) for a in alphas]
    if alphas != sorted(alphas):
        raise ValidationError("alphas must be sorted ascending")
    scenes = list(scenes) if scenes else list(profile.scenes)
    if not scenes:
        raise ValidationError("no scenes to sweep")
    candidates = tuple(candidates) if candidates else tuple(representative_subnets().values())
    profile.require(scenes, [c.id for c in candidates])
    costs = costs or CostCache()
    ids = tuple(c.id for c in candidates)
    rows = []
    for alpha in alphas:
        counts = Counter(
            select_subnet(profile, SelectionRequest(s, alpha, cost_metric, candidates), costs).chosen.id
            for s in scenes
        )
        rows.append(tuple(counts.get(i, 0) / len(scenes) for i in ids))
    names = {c.id: n for n, c in representative_subnets().items()}
    return SweepTable(tuple(alphas), ids, tuple(rows), names)
