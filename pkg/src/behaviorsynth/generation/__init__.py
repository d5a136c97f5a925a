"""Prompt construction, LLM providers, response parsing and repair."""
from .parsing import GenerationResult, ValidationReport, parse_response, validate_candidates
from .pipeline import generate_dataset, repair_loop, write_generation_outputs
from .prompt import REQUIREMENTS, PromptBundle, SceneSpec, build_prompt, chunk_prompts
from .providers import (
    ChatProvider,
    HttpChatProvider,
    MockProvider,
    ProviderConfig,
    Transcript,
    generate,
    make_provider,
)

__all__ = [
    "REQUIREMENTS", "ChatProvider", "GenerationResult", "HttpChatProvider", "MockProvider", "PromptBundle",
    "ProviderConfig", "SceneSpec", "Transcript", "ValidationReport", "build_prompt", "chunk_prompts",
    "generate", "generate_dataset", "make_provider", "parse_response", "repair_loop", "validate_candidates",
    "write_generation_outputs",
]
