"""LLM access: prompt templates, chat clients, reply parsing."""

from polyview.llmgate.answers import ANSWER_TAG, TaggedAnswer, parse_answer_tag
from polyview.llmgate.client import (
    HttpLlmClient,
    LlmClient,
    MockLlmClient,
    Reply,
    append_transcript,
    load_transcript,
    make_client,
    transcript_entry,
)
from polyview.llmgate.prompts import (
    PLACEHOLDERS,
    TEMPLATE_IDS,
    PromptTemplate,
    RenderedPrompt,
    format_contexts,
    get_template,
    prompt_hash,
    render_prompt,
)

__all__ = [
    "ANSWER_TAG",
    "HttpLlmClient",
    "LlmClient",
    "MockLlmClient",
    "PLACEHOLDERS",
    "PromptTemplate",
    "Reply",
    "RenderedPrompt",
    "TEMPLATE_IDS",
    "TaggedAnswer",
    "append_transcript",
    "format_contexts",
    "get_template",
    "load_transcript",
    "make_client",
    "parse_answer_tag",
    "prompt_hash",
    "render_prompt",
    "transcript_entry",
]
