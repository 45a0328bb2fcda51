from .clients import (
    AgentClient,
    MockAgentClient,
    MockScene,
    RemoteAgentClient,
    RemoteConfig,
    load_client,
)
from .parsing import (
    FilterResponse,
    FilterScore,
    SceneAnnotation,
    normalize_scene,
    parse_filter_response,
    parse_scene_annotation,
    score_filter,
)
from .prompts import FILTER_VARIANTS, Variant, render_prompt, template_text

__all__ = [
    "AgentClient",
    "FILTER_VARIANTS",
    "FilterResponse",
    "FilterScore",
    "MockAgentClient",
    "MockScene",
    "RemoteAgentClient",
    "RemoteConfig",
    "SceneAnnotation",
    "Variant",
    "load_client",
    "normalize_scene",
    "parse_filter_response",
    "parse_scene_annotation",
    "render_prompt",
    "score_filter",
    "template_text",
]
