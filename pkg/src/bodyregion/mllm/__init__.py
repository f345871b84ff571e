"""Multimodal-LLM pipelines: composite views, rule-injected prompts, answer parsing."""

from .client import BackendConfig, HttpClient, MockClient, ModelClient, evidence_top_region, fingerprint
from .pipeline import classify_batch_via_mllm, classify_via_mllm, write_transcript
from .prompt import (
    BOUNDARIES,
    PLAIN,
    SEGMENTATION_AWARE,
    AnatomicalEvidence,
    PromptBundle,
    build_prompt,
    parse_response,
    visibility_instruction,
)
from .render import CompositeImage, extract_views, render_views

__all__ = [
    "AnatomicalEvidence", "BOUNDARIES", "BackendConfig", "CompositeImage", "HttpClient",
    "MockClient", "ModelClient", "PLAIN", "PromptBundle", "SEGMENTATION_AWARE",
    "build_prompt", "classify_batch_via_mllm", "classify_via_mllm", "evidence_top_region",
    "extract_views", "fingerprint", "parse_response", "render_views", "visibility_instruction",
    "write_transcript",
]
