"""Prompt templates for scene annotation and scene-aware class filtering."""

from __future__ import annotations

from enum import Enum
from functools import lru_cache
from importlib import resources
from string import Template
from typing import Sequence

from ..exceptions import ValidationError


class Variant(str, Enum):
    FILTER_GPT5 = "filter_gpt5"
    FILTER_GEMINI = "filter_gemini"
    FILTER_TOPK = "filter_topk"
    SCENE_ANNOTATION = "scene_annotation"

    @classmethod
    def parse(cls, value) -> Variant:
        try:
            return cls(value)
        except ValueError:
            choices = ", ".join(v.value for v in cls)
            raise ValidationError(f"unknown prompt variant {value!r} (choose from {choices})") from None


FILTER_VARIANTS = (Variant.FILTER_GPT5, Variant.FILTER_GEMINI, Variant.FILTER_TOPK)
OBJECT_SEPARATOR = ", "


@lru_cache(maxsize=None)
def template_text(variant) -> str:
    variant = Variant.parse(variant)
    path = resources.files(__package__).joinpath("templates", f"{variant.value}.txt")
    return path.read_text(encoding="utf-8").rstrip("\n")


def render_prompt(
    variant,
    scene: str | None = None,
    object_names: Sequence[str] | None = None,
    k: int | None = None,
) -> str:
    variant = Variant.parse(variant)
    if variant is Variant.SCENE_ANNOTATION:
        # the annotation prompt travels with an image, not with text fields
        return template_text(variant)
    if not scene or not scene.strip():
        raise ValidationError("scene must be a nonempty string")
    if not object_names:
        raise ValidationError("object_names must be nonempty")
    fields = {"scene": scene, "object_names": OBJECT_SEPARATOR.join(object_names)}
    if variant is Variant.FILTER_TOPK:
        if k is None:
            raise ValidationError("the top-k variant requires k")
        if int(k) <= 0:
            raise ValidationError("k must be positive")
        fields["k"] = str(int(k))
    elif k is not None:
        raise ValidationError(f"k is only meaningful for {Variant.FILTER_TOPK.value}")
    return Template(template_text(variant)).substitute(fields)
