"""Per-clause probing orchestrator.

Each clause runs a loop of two chat calls: a free-text thought over the full
serialized workspace, then a structured tool call. Repeated identical calls
are answered from the route table instead of the database; everything else
goes through the toolbox dispatcher. After all clauses stop, harvest_linkings
turns the accumulated standard feedback into verified linkings, dropping any
proposal the recorded feedback does not actually support.
"""

from __future__ import annotations

import logging

from .cotf import (
    CoTFDocument,
    ToolCall,
    ToolFeedback,
    Turn,
    VerifiedLinking,
    append_turn,
    detect_repeat,
    serialize,
    turn_facts,
)
from .errors import LlmError, MalformedToolCall, SchemaViolation
from .llm import (
    ChatMessage,
    ChatRequest,
    _extract_json_object,
    extract_json_array,
    structured_tool_call,
)
from .prompts import (
    HARVEST_SYSTEM,
    HARVEST_TEMPERATURE,
    HARVEST_USER,
    LOOKUP_SYSTEM,
    LOOKUP_TEMPERATURE,
    LOOKUP_THOUGHT_USER,
    LOOKUP_TOOL_USER,
)
from .toolbox import ToolContext, dispatch, render_guidance

logger = logging.getLogger(__name__)

# After a repeated identical call, suggest the next-broader probe. Each
# message names exactly one registered tool.
ROUTE_RULES: dict[str, str] = {
    "value_in": (
        "This tool has been called before."
        " Consider using sim_value_in for a fuzzy search."
    ),
    "sim_value_in": (
        "This tool has been called before."
        " Consider using uniq_value to list the column's distinct values instead."
    ),
    "uniq_value": (
        "This tool has been called before."
        " Consider using info to read the column's metadata and description instead."
    ),
    "head": (
        "This tool has been called before."
        " Consider using uniq_value to study one column's distinct values instead."
    ),
    "random": (
        "This tool has been called before."
        " Consider using uniq_value to study one column's distinct values instead."
    ),
    "if_null": (
        "This tool has been called before."
        " Consider using info to read the column's metadata and description instead."
    ),
    "info": (
        "This tool has been called before."
        " Consider using sim_columns to search the whole schema for related columns instead."
    ),
    "sim_columns": (
        "This tool has been called before."
        " Consider using head to inspect real rows of a candidate table instead."
    ),
}


def classify_feedback(
    call: ToolCall, repeat: bool, rules: dict[str, str], context: ToolContext
) -> ToolFeedback:
    """Repeats with a known tool get guiding feedback and never reach the
    database; everything else is dispatched and the result passes through."""
    if repeat and call.tool in rules:
        return ToolFeedback.guiding(rules[call.tool])
    return dispatch(call, context)


def _best_effort_tool(raw_outputs: list[str]) -> str:
    for raw in raw_outputs:
        obj = _extract_json_object(raw)
        if obj is not None and isinstance(obj.get("tool"), str):
            return obj["tool"]
    return ""


def run_clause(
    doc: CoTFDocument,
    clause_index: int,
    llm,
    context: ToolContext,
    rules: dict[str, str] | None = None,
    temperature: float = LOOKUP_TEMPERATURE,
    turn_cap: int | None = None,
) -> CoTFDocument:
    """Probe one clause until its stop signal or the turn budget.

    A call that stays malformed after the repair round-trip is recorded as a
    corrective turn and the loop continues; any other client failure aborts
    the clause, keeping the partial trace. turn_cap tightens (never widens)
    the per-clause budget.
    """
    rules = ROUTE_RULES if rules is None else rules
    cap = doc.max_turns if turn_cap is None else min(doc.max_turns, turn_cap)
    clause = doc.clauses[clause_index]
    system = ChatMessage("system", LOOKUP_SYSTEM.format(guidance=render_guidance()))

    while True:
        column = doc.turns[clause_index]
        if column and column[-1].tool_call.tool == "none":
            break
        if len(column) >= cap:
            break

        workspace = serialize(doc).decode("utf-8")
        thought_messages = [
            system,
            ChatMessage(
                "user",
                LOOKUP_THOUGHT_USER.format(
                    workspace=workspace,
                    clause_index=clause.index,
                    clause_text=clause.text,
                ),
            ),
        ]
        try:
            thought = llm.chat(
                ChatRequest(
                    messages=thought_messages,
                    temperature=temperature,
                    response_format="free_text",
                )
            )
            call = structured_tool_call(
                llm,
                ChatRequest(
                    messages=thought_messages
                    + [
                        ChatMessage("assistant", thought),
                        ChatMessage("user", LOOKUP_TOOL_USER),
                    ],
                    temperature=temperature,
                    response_format="tool_call_schema",
                ),
            )
        except MalformedToolCall as exc:
            call = ToolCall(_best_effort_tool(exc.raw_outputs), {})
            turn = Turn(thought=thought, tool_call=call, feedback=ToolFeedback.corrective(str(exc)))
            append_turn(doc, clause_index, turn)
            continue
        except LlmError as exc:
            logger.warning("clause %d aborted with a partial trace: %s", clause_index, exc)
            break

        repeat = detect_repeat(doc, clause_index, call)
        feedback = classify_feedback(call, repeat, rules, context)
        append_turn(doc, clause_index, Turn(thought=thought, tool_call=call, feedback=feedback))
        if call.tool == "none":
            break
    return doc


def run_lookup(
    doc: CoTFDocument,
    llm,
    context: ToolContext,
    rules: dict[str, str] | None = None,
    global_budget: int | None = None,
) -> CoTFDocument:
    """Run every clause in order. global_budget caps the total turn count
    across clauses (default max_turns per clause); it is a hard safety net on
    top of the per-clause cap."""
    if global_budget is None:
        global_budget = doc.max_turns * len(doc.clauses)
    for clause in doc.clauses:
        used = sum(len(col) for col in doc.turns)
        room = global_budget - used
        if room <= 0:
            logger.warning("global turn budget %d exhausted", global_budget)
            break
        run_clause(
            doc,
            clause.index,
            llm,
            context,
            rules,
            turn_cap=len(doc.turns[clause.index]) + room,
        )
    return doc


def harvest_linkings(
    doc: CoTFDocument, llm, temperature: float = HARVEST_TEMPERATURE
) -> list[VerifiedLinking]:
    """Ask the model to read the workspace back into linkings, then keep only
    proposals some single standard-feedback turn fully grounds.

    The grounding turn must contain every named field (table, column,
    literal) verbatim; a proposal whose cited source_turn does not ground it
    is re-pointed at the first turn that does, or dropped.
    """
    request = ChatRequest(
        messages=[
            ChatMessage("system", HARVEST_SYSTEM),
            ChatMessage(
                "user", HARVEST_USER.format(workspace=serialize(doc).decode("utf-8"))
            ),
        ],
        temperature=temperature,
        response_format="free_text",
    )
    response = llm.chat(request)
    proposals = extract_json_array(response)
    if proposals is None:
        logger.warning("linking harvest output was not a JSON array; keeping none")
        return []

    grounded_turns: list[tuple[tuple[int, int], set[str]]] = []
    for ci, column in enumerate(doc.turns):
        for ti, turn in enumerate(column):
            if turn.feedback.kind == "standard":
                grounded_turns.append(((ci, ti), turn_facts(turn)))
    facts_by_index = dict(grounded_turns)

    out: list[VerifiedLinking] = []
    for item in proposals:
        if not isinstance(item, dict):
            continue
        table = item.get("table")
        column = item.get("column")
        literal = item.get("literal")
        if literal is not None and not isinstance(literal, str):
            if isinstance(literal, bool) or not isinstance(literal, (int, float)):
                continue
            literal = str(literal)
        fields = (table, column, literal)
        if any(f is not None and not isinstance(f, str) for f in fields):
            continue
        needed = {f for f in fields if f is not None}

        source = None
        cited = item.get("source_turn")
        if isinstance(cited, (list, tuple)) and len(cited) == 2:
            key = tuple(cited)
            if key in facts_by_index and needed <= facts_by_index[key]:
                source = key
        if source is None:
            source = next(
                (idx for idx, facts in grounded_turns if needed <= facts), None
            )
        if source is None:
            continue

        rationale = item.get("rationale")
        try:
            link = VerifiedLinking(
                kind=item.get("kind"),
                table=table,
                column=column,
                literal=literal,
                rationale=rationale if isinstance(rationale, str) else "",
                source_turn=source,
            )
        except SchemaViolation:
            continue
        out.append(link)
    return out
