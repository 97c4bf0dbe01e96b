from .parsers import (
    NO_PAIRS_SENTINEL,
    NONE,
    EdgeLine,
    LabelLine,
    ParseError,
    TacticReasoning,
    parse_assignments,
    parse_edge_lines,
    parse_entity_extraction,
    parse_label_line,
    parse_regex_response,
    parse_stage_reasoning,
    parse_summary_annotations,
    parse_summary_response,
    parse_yes_no,
)
from .prompts import (
    ChatRequest,
    InContextExample,
    MissingBindingError,
    TemplateId,
    base_prompt,
    render_prompt,
    template_text,
)
from .providers import (
    ChatError,
    ChatProvider,
    ChatProviderConfig,
    CountingProvider,
    OpenAIChatClient,
    ProtocolError,
    ScriptedResponder,
    ScriptRule,
    TransportError,
    UnmatchedPromptError,
    chat_complete,
    complete_many,
)

__all__ = [name for name in dir() if not name.startswith("_")]
