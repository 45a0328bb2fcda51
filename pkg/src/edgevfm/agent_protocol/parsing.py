"""Strict validation of agent responses and filter-quality scoring."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from ..exceptions import ProtocolError, ValidationError
from .prompts import Variant

_FENCE = re.compile(r"\A\s*```[A-Za-z0-9_-]*[ \t]*\n(.*?)\n?```\s*\Z", re.DOTALL)


@dataclass(frozen=True)
class FilterResponse:
    verdicts: tuple[tuple[str, int], ...]

    @classmethod
    def from_mapping(cls, verdicts: Mapping[str, int], order: Sequence[str] | None = None):
        order = list(order) if order is not None else list(verdicts)
        return cls(tuple((name, int(verdicts[name])) for name in order))

    @property
    def kept(self) -> frozenset[str]:
        return frozenset(name for name, v in self.verdicts if v == 1)

    def as_dict(self) -> dict[str, int]:
        return dict(self.verdicts)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), ensure_ascii=False)


def _reject_duplicates(pairs):
    seen = {}
    for key, value in pairs:
        if key in seen:
            raise ProtocolError("keys", f"duplicate key {key!r}", extra=[key])
        seen[key] = value
    return seen


def parse_filter_response(
    raw_text: str,
    expected_names: Sequence[str],
    variant=Variant.FILTER_GPT5,
    k: int | None = None,
) -> FilterResponse:
    variant = Variant.parse(variant)
    if variant is Variant.SCENE_ANNOTATION:
        raise ValidationError("scene annotations are parsed with parse_scene_annotation")
    names = list(expected_names)
    if not names:
        raise ValidationError("expected_names must be nonempty")
    if len(set(names)) != len(names):
        raise ValidationError("expected_names must be duplicate-free")
    if variant is Variant.FILTER_TOPK and k is None:
        raise ValidationError("the top-k variant requires k")

    text = raw_text
    if variant is Variant.FILTER_GEMINI:
        fenced = _FENCE.match(text)
        if fenced:
            text = fenced.group(1)
    try:
        doc = json.loads(text, object_pairs_hook=_reject_duplicates)
    except ProtocolError:
        raise
    except json.JSONDecodeError as exc:
        raise ProtocolError("malformed", f"response is not JSON ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise ProtocolError("malformed", "response must be a JSON object")

    expected = set(names)
    missing = [n for n in names if n not in doc]
    extra = sorted(set(doc) - expected)
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing {missing}")
        if extra:
            parts.append(f"unexpected {extra}")
        raise ProtocolError("keys", "; ".join(parts), missing=missing, extra=extra)
    for name in names:
        value = doc[name]
        # bool is an int subclass; JSON true/false are not 0/1
        if isinstance(value, bool) or not isinstance(value, int) or value not in (0, 1):
            raise ProtocolError("value", f"{name!r} has value {value!r}, expected 0 or 1")
    response = FilterResponse.from_mapping(doc, names)
    if variant is Variant.FILTER_TOPK and len(response.kept) > int(k):
        raise ProtocolError(
            "topk_overflow", f"{len(response.kept)} classes kept, at most {int(k)} allowed"
        )
    return response


def normalize_scene(phrase: str) -> str:
    return " ".join(phrase.strip().lower().split())


@dataclass(frozen=True)
class SceneAnnotation:
    phrase: str


def parse_scene_annotation(raw_text: str) -> SceneAnnotation:
    text = raw_text.strip()
    if not text:
        raise ProtocolError("malformed", "empty scene annotation")
    if "```" in text or "\n" in text:
        raise ProtocolError("malformed", "scene annotation must be one raw line")
    if text[0] in "\"'`" or text[-1] in "\"'`":
        raise ProtocolError("malformed", "scene annotation must not be quoted")
    words = text.split()
    if len(words) > 3:
        raise ProtocolError("malformed", f"scene annotation has {len(words)} words, at most 3")
    return SceneAnnotation(normalize_scene(text))


@dataclass(frozen=True)
class FilterScore:
    recall: float
    precision: float
    per_sample: tuple[tuple[float, float], ...]

    def to_dict(self) -> dict:
        return {
            "recall": self.recall,
            "precision": self.precision,
            "per_sample": [list(p) for p in self.per_sample],
        }


def _kept_set(item) -> frozenset[str]:
    if isinstance(item, FilterResponse):
        return item.kept
    return frozenset(item)


def score_filter(responses: Sequence, present_sets: Sequence[Iterable[str]]) -> FilterScore:
    """Macro recall/precision of kept sets against ground-truth present sets.

    Empty denominators count as 1 (nothing to find, or nothing claimed).
    """
    if len(responses) != len(present_sets):
        raise ValidationError(
            f"{len(responses)} responses for {len(present_sets)} ground-truth sets"
        )
    if not responses:
        raise ValidationError("cannot score an empty sample list")
    per_sample = []
    for resp, present in zip(responses, present_sets):
        kept = _kept_set(resp)
        present = frozenset(present)
        hit = len(kept & present)
        recall = hit / len(present) if present else 1.0
        precision = hit / len(kept) if kept else 1.0
        per_sample.append((recall, precision))
    n = len(per_sample)
    return FilterScore(
        recall=math.fsum(r for r, _ in per_sample) / n,
        precision=math.fsum(p for _, p in per_sample) / n,
        per_sample=tuple(per_sample),
    )
