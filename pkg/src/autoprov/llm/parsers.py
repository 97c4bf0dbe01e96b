"""Parsers for the structured text formats the prompts ask for.

Every parser is total: malformed input produces empty results or a skip list,
and only the documented "nothing usable at all" conditions raise.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from ..core import NO_LABEL

NONE = "NONE"
NO_PAIRS_SENTINEL = "NO MEANINGFUL PAIRS POSSIBLE"
NO_REGEX = "No Regex"


class ParseError(ValueError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


# --- Prompt 1 --------------------------------------------------------------

_ANNOT_RE = re.compile(r'"([^"]*)"|\(([^()]*)\)|\{([^{}]*)\}|\[([^\[\]]*)\]')


@dataclass
class SummaryAnnotations:
    names: dict[str, str] = field(default_factory=dict)
    ids: list[str] = field(default_factory=list)
    itypes: list[str] = field(default_factory=list)
    etypes: list[str] = field(default_factory=list)


def parse_summary_annotations(text: str) -> SummaryAnnotations:
    """Pull quoted names, (ids), {interaction types} and [entity types] from a summary.

    An id takes the nearest preceding quoted name; an interaction marker
    ends that association so names never leak across interactions.
    """
    out = SummaryAnnotations()
    last_name: str | None = None
    for m in _ANNOT_RE.finditer(text):
        name, ident, itype, etype = m.groups()
        if name is not None:
            last_name = name
        elif ident is not None:
            ident = ident.strip()
            if not ident or re.search(r"\s", ident):
                continue
            if ident not in out.ids:
                out.ids.append(ident)
            if last_name is not None and ident not in out.names:
                out.names[ident] = last_name
        elif itype is not None:
            out.itypes.append(itype.strip())
            last_name = None
        else:
            out.etypes.append(etype.strip())
    return out


# --- Prompts 2 and 3 -------------------------------------------------------

_ASSIGN_RE = re.compile(r'^\s*"([^"]+)"\s*=\s*(?:"([^"]*)"|(NONE))\s*$')


@dataclass
class Assignments:
    values: dict[str, str] = field(default_factory=dict)
    conflicts: list[tuple[str, str, str]] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)


def parse_assignments(text: str) -> Assignments:
    """Lines of the form ``"ID" = "value"`` or ``"ID" = NONE``; first occurrence wins."""
    out = Assignments()
    for line in text.splitlines():
        if not line.strip():
            continue
        m = _ASSIGN_RE.match(line)
        if not m:
            out.skipped.append(line)
            continue
        key, quoted, bare = m.groups()
        value = bare if bare is not None else (quoted.strip() or NONE)
        if value.upper() == NONE:
            value = NONE
        if key in out.values:
            if out.values[key] != value:
                out.conflicts.append((key, out.values[key], value))
            continue
        out.values[key] = value
    return out


_PAIR_RE = re.compile(r"^\s*\(\s*([^,()]+?)\s*,\s*([^,()]+?)\s*\)")
_SECTION_PAIRS = re.compile(r"\[RELATED ENTITIES and IP ADDRESSES\]", re.I)
_SECTION_NAMES = re.compile(r"\[ENTITY NAMES\]", re.I)


@dataclass
class EntityExtraction:
    pairs: list[tuple[str, str]]
    names: dict[str, str]
    conflicts: list[tuple[str, str, str]] = field(default_factory=list)


def parse_entity_extraction(text: str) -> EntityExtraction:
    """Prompt-3 output: the pair section followed by the name section."""
    mp = _SECTION_PAIRS.search(text)
    mn = _SECTION_NAMES.search(text)
    if mp is None or mn is None:
        raise ParseError("entity extraction output lacks its section headers", text)
    pair_text = text[mp.end() : mn.start()] if mp.start() < mn.start() else text[mp.end() :]
    name_text = text[mn.end() :] if mp.start() < mn.start() else text[mn.end() : mp.start()]
    pairs: list[tuple[str, str]] = []
    if NO_PAIRS_SENTINEL not in pair_text.upper():
        for line in pair_text.splitlines():
            m = _PAIR_RE.match(line)
            if m and (m.group(1), m.group(2)) not in pairs:
                pairs.append((m.group(1), m.group(2)))
    names = parse_assignments(name_text)
    return EntityExtraction(pairs=pairs, names=names.values, conflicts=names.conflicts)


# --- Prompt 4 --------------------------------------------------------------

_EDGE_RE = re.compile(
    r"^\s*\(\s*([^,()]+?)\s*,\s*([^,()]+?)\s*\)\s*"
    r"A:\s*\[(.*?)\]\s*"
    r"\{\s*D\s*=\s*(->|<-)\s*\}\s*"
    r"\(\s*timestamp\s*=\s*(.*)\)\s*$"
)


@dataclass(frozen=True)
class EdgeLine:
    left_id: str
    right_id: str
    actions: tuple[str, ...]
    direction: str  # "LR" or "RL"
    timestamp_raw: str | None


def _split_actions(text: str) -> tuple[str, ...]:
    acts = []
    for part in text.split(","):
        part = part.strip().strip("'\"").strip()
        if part and part != "..." and part not in acts:
            acts.append(part)
    return tuple(acts)


def parse_edge_lines(text: str) -> tuple[list[EdgeLine], list[str]]:
    """Prompt-4 output lines. Returns (edges, skipped lines)."""
    edges: list[EdgeLine] = []
    skipped: list[str] = []
    for line in text.splitlines():
        if not line.strip():
            continue
        m = _EDGE_RE.match(line)
        if not m:
            skipped.append(line)
            continue
        left, right, acts, arrow, ts = m.groups()
        ts = ts.strip()
        edges.append(
            EdgeLine(
                left_id=left,
                right_id=right,
                actions=_split_actions(acts) or (NO_LABEL,),
                direction="LR" if arrow == "->" else "RL",
                timestamp_raw=None if ts in ("", "...") else ts,
            )
        )
    if not edges and NO_PAIRS_SENTINEL not in text.upper():
        raise ParseError("no well-formed edge lines", text)
    return edges, skipped


# --- Prompt 5 --------------------------------------------------------------


@dataclass(frozen=True)
class RegexProposal:
    pattern: str | None  # None means the model answered "No Regex"
    token: str | None = None


def parse_regex_response(text: str) -> RegexProposal:
    """First non-empty line is the pattern; an optional ``Token:`` line names the
    log token chosen for a normalized value."""
    pattern = None
    token = None
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        tm = re.match(r"(?i)^token\s*:\s*(.*)$", stripped)
        if tm:
            token = tm.group(1).strip().strip("`")
            continue
        if pattern is None:
            stripped = re.sub(r"(?i)^(regex|pattern)\s*:\s*", "", stripped)
            if len(stripped) >= 2 and stripped[0] == stripped[-1] == "`":
                stripped = stripped[1:-1]
            pattern = stripped
    if pattern is None or pattern.strip().lower() == NO_REGEX.lower():
        return RegexProposal(None, token)
    return RegexProposal(pattern, token)


# --- Prompt 6 --------------------------------------------------------------

LABEL_DELIMITER = " | Type: "


@dataclass(frozen=True)
class LabelLine:
    entity_name: str
    label: str  # NO_LABEL when the model declined


def parse_label_line(text: str) -> LabelLine:
    """``entity_name | Type: <label>``; the last delimiter on the last matching line counts."""
    lines = [ln for ln in text.splitlines() if LABEL_DELIMITER in ln]
    if not lines:
        raise ParseError(f"missing {LABEL_DELIMITER.strip()!r} delimiter", text)
    line = lines[-1].strip()
    name, _, label = line.rpartition(LABEL_DELIMITER)
    label = label.strip().strip("*`").strip()
    while len(label) >= 2 and (label[0], label[-1]) in (("<", ">"), ("[", "]"), ("(", ")"), ('"', '"'), ("'", "'")):
        label = label[1:-1].strip()
    if not label or label.upper() == NO_LABEL:
        label = NO_LABEL
    return LabelLine(entity_name=name.strip().strip("*`").strip(), label=label)


# --- Prompts 7 and 9 -------------------------------------------------------


def parse_yes_no(text: str) -> bool | None:
    """True for YES, False for NO, None for anything else."""
    answer = text.strip().casefold()
    if answer == "yes":
        return True
    if answer == "no":
        return False
    return None


# --- Prompt 8 --------------------------------------------------------------


@dataclass(frozen=True)
class TacticReasoning:
    tactic: str
    reasoning: str
    flagged: bool = False  # Stage without a following Reasoning

    @property
    def key(self) -> str:
        return tactic_key(self.tactic)


def tactic_key(name: str) -> str:
    return " ".join(name.split()).casefold()


def _field_value(line: str, label: str) -> str | None:
    m = re.match(rf"^\s*[*_]*{label}[*_]*\s*:\s*(.*)$", line, re.I)
    if not m:
        return None
    return m.group(1).strip().strip("*_").strip().strip("<>").strip()


def parse_stage_reasoning(text: str) -> list[TacticReasoning]:
    out: list[TacticReasoning] = []
    stage: str | None = None
    reasoning: list[str] | None = None

    def flush() -> None:
        nonlocal stage, reasoning
        if stage is not None:
            if reasoning is None:
                out.append(TacticReasoning(stage, "", flagged=True))
            else:
                out.append(TacticReasoning(stage, " ".join(reasoning).strip()))
        stage, reasoning = None, None

    for line in text.splitlines():
        s = _field_value(line, "Stage")
        if s is not None:
            flush()
            stage = s
            continue
        r = _field_value(line, "Reasoning")
        if r is not None and stage is not None and reasoning is None:
            reasoning = [r] if r else []
            continue
        if _field_value(line, "Summary") is not None:
            flush()
            continue
        if stage is not None and reasoning is not None and line.strip():
            reasoning.append(line.strip())
    flush()
    return out


def parse_summary_response(text: str) -> tuple[str, list[TacticReasoning]]:
    """Prompt-8 output: the ``Summary:`` paragraph plus Stage/Reasoning pairs."""
    lines = text.splitlines()
    start = None
    for i, line in enumerate(lines):
        value = _field_value(line, "Summary")
        if value is not None:
            start = i
            parts = [value] if value else []
            break
    if start is None:
        raise ParseError("response has no 'Summary:' paragraph", text)
    for line in lines[start + 1 :]:
        if _field_value(line, "Stage") is not None or re.match(r"^\s*[*_#]*\s*Task\s*2", line, re.I):
            break
        if line.strip():
            parts.append(line.strip())
    return " ".join(parts).strip(), parse_stage_reasoning("\n".join(lines[start + 1 :]))
