"""Per-clause probing orchestrator: route guidance, the thought/call loop,
and grounded linking harvest."""

import json
import random
import re

import pytest

from diver.cotf import (
    TOOL_NAMES,
    CoTFDocument,
    Question,
    ToolCall,
    ToolFeedback,
    Turn,
)
from diver.breakup import token_refine
from diver.database import catalog, open_database
from diver.embedding import LexicalEmbedder
from diver.errors import ScriptExhausted
from diver.llm import ScriptedSession
from diver.lookup import (
    ROUTE_RULES,
    classify_feedback,
    harvest_linkings,
    run_clause,
    run_lookup,
)
from diver.prompts import HARVEST_TEMPERATURE, LOOKUP_TEMPERATURE, LOOKUP_TOOL_USER
from diver.toolbox import ToolContext


@pytest.fixture(scope="module")
def ctx(schools_db, schools_desc_dir):
    handle = open_database(schools_db)
    return ToolContext(
        handle=handle,
        catalog=catalog(handle, schools_desc_dir),
        embedder=LexicalEmbedder(),
        rng=random.Random(7),
    )


def one_clause_doc(text="Which schools serve grade K?", max_turns=5):
    q = Question(question_id="q1", db_id="california_schools", text=text)
    return CoTFDocument(question=q, clauses=token_refine(text, []), max_turns=max_turns)


def two_clause_doc(max_turns=5):
    text = "Which schools serve grade K?"
    q = Question(question_id="q2", db_id="california_schools", text=text)
    clauses = token_refine(text, ["Which schools", "serve grade K"])
    assert len(clauses) == 2
    return CoTFDocument(question=q, clauses=clauses, max_turns=max_turns)


def tc(tool, **args):
    return json.dumps({"tool": tool, "args": args})


def standalone(name, text):
    return re.findall(rf"(?<![A-Za-z_]){re.escape(name)}(?![A-Za-z_])", text)


# --- route rules ---


def test_route_rules_cover_every_probing_tool():
    assert set(ROUTE_RULES) == set(TOOL_NAMES) - {"none"}


def test_value_in_rule_message_is_the_fixed_sentence():
    assert ROUTE_RULES["value_in"] == (
        "This tool has been called before."
        " Consider using sim_value_in for a fuzzy search."
    )


def test_rule_suggestions_name_exactly_one_registered_tool():
    expected = {
        "value_in": "sim_value_in",
        "sim_value_in": "uniq_value",
        "uniq_value": "info",
        "head": "uniq_value",
        "random": "uniq_value",
        "if_null": "info",
        "info": "sim_columns",
        "sim_columns": "head",
    }
    for trigger, message in ROUTE_RULES.items():
        named = {t for t in TOOL_NAMES if standalone(t, message)}
        assert named == {expected[trigger]}, (trigger, message)


# --- classify_feedback ---


def test_repeat_classifies_guiding_and_never_touches_db(ctx, monkeypatch):
    def boom(*a, **k):
        raise AssertionError("database touched on a repeated call")

    monkeypatch.setattr(ctx.handle, "query", boom)
    call = ToolCall("value_in", {"table": "frpm", "column": "Low Grade", "value": "K"})
    fb = classify_feedback(call, repeat=True, rules=ROUTE_RULES, context=ctx)
    assert fb.kind == "guiding"
    assert fb.message == ROUTE_RULES["value_in"]


def test_fresh_call_passes_dispatch_result_through(ctx):
    ok = classify_feedback(
        ToolCall("value_in", {"table": "frpm", "column": "Low Grade", "value": "K"}),
        repeat=False,
        rules=ROUTE_RULES,
        context=ctx,
    )
    assert ok.kind == "standard"
    assert ok.result == {"exists": True, "match_count": 5}

    bad = classify_feedback(
        ToolCall("value_in", {"table": "frpm", "column": "No Such", "value": "K"}),
        repeat=False,
        rules=ROUTE_RULES,
        context=ctx,
    )
    assert bad.kind == "corrective"


def test_repeated_unknown_tool_falls_back_to_corrective(ctx):
    fb = classify_feedback(
        ToolCall("look_up", {}), repeat=True, rules=ROUTE_RULES, context=ctx
    )
    assert fb.kind == "corrective"


# --- run_clause ---


def test_scripted_clause_probes_then_stops(ctx):
    doc = one_clause_doc()
    llm = ScriptedSession(
        [
            "Check how grades are stored.",
            tc("uniq_value", table="frpm", column="Low Grade"),
            "The value K exists; done.",
            tc("none"),
        ]
    )
    run_clause(doc, 0, llm, ctx)
    turns = doc.turns[0]
    assert [t.tool_call.tool for t in turns] == ["uniq_value", "none"]
    assert turns[0].thought == "Check how grades are stored."
    assert turns[0].feedback.kind == "standard"
    assert turns[0].feedback.result == {
        "distinct_count": 4,
        "samples": ["1", "6", "9", "K"],
    }
    assert turns[1].feedback.kind == "standard"
    assert turns[1].feedback.result == {}
    assert llm.consumed == 4


def test_repeated_call_gets_guiding_feedback_without_query(ctx, schools_db, schools_desc_dir):
    handle = open_database(schools_db)
    counted = []
    real_query = handle.query
    handle.query = lambda *a, **k: (counted.append(a), real_query(*a, **k))[1]
    local_ctx = ToolContext(
        handle=handle, catalog=catalog(open_database(schools_db), schools_desc_dir),
        embedder=LexicalEmbedder(),
    )

    probe = tc("value_in", table="frpm", column="Low Grade", value="K")
    doc = one_clause_doc()
    llm = ScriptedSession(["t1", probe, "t2", probe, "t3", tc("none")])
    run_clause(doc, 0, llm, local_ctx)

    kinds = [t.feedback.kind for t in doc.turns[0]]
    assert kinds == ["standard", "guiding", "standard"]
    assert doc.turns[0][1].feedback.message == (
        "This tool has been called before."
        " Consider using sim_value_in for a fuzzy search."
    )
    assert len(counted) == 1


def test_corrective_then_recovery_within_one_clause(ctx):
    doc = one_clause_doc()
    llm = ScriptedSession(
        [
            "t1",
            tc("value_in", table="frpm", column="No Such", value="K"),
            "t2",
            tc("value_in", table="frpm", column="Low Grade", value="K"),
            "t3",
            tc("none"),
        ]
    )
    run_clause(doc, 0, llm, ctx)
    kinds = [t.feedback.kind for t in doc.turns[0]]
    assert kinds == ["corrective", "standard", "standard"]
    assert "No Such" in doc.turns[0][0].feedback.message


def test_never_stopping_clause_is_cut_at_max_turns(ctx):
    doc = one_clause_doc(max_turns=5)
    script = []
    for i in range(5):
        script += [f"t{i}", tc("value_in", table="frpm", column="Low Grade", value=f"v{i}")]
    llm = ScriptedSession(script)
    run_clause(doc, 0, llm, ctx)
    assert len(doc.turns[0]) == 5
    assert doc.turns[0][-1].tool_call.tool != "none"
    assert llm.consumed == 10
    assert llm.remaining() == 0


def test_prompts_carry_guidance_workspace_and_thought(ctx):
    doc = one_clause_doc()
    llm = ScriptedSession(
        [
            "probe the grade column",
            tc("uniq_value", table="frpm", column="Low Grade"),
            "done",
            tc("none"),
        ]
    )
    run_clause(doc, 0, llm, ctx)

    first_thought = llm.requests[0]
    assert first_thought.temperature == LOOKUP_TEMPERATURE
    assert first_thought.response_format == "free_text"
    assert first_thought.messages[0].role == "system"
    assert "### value_in" in first_thought.messages[0].content
    assert "### none" in first_thought.messages[0].content
    assert doc.clauses[0].text in first_thought.messages[-1].content
    assert "Which schools serve grade K?" in first_thought.messages[-1].content

    first_tool = llm.requests[1]
    assert first_tool.response_format == "tool_call_schema"
    assert first_tool.messages[:-2] == first_thought.messages
    assert first_tool.messages[-2].role == "assistant"
    assert first_tool.messages[-2].content == "probe the grade column"
    assert first_tool.messages[-1].content == LOOKUP_TOOL_USER

    second_thought = llm.requests[2]
    assert '"distinct_count": 4' in second_thought.messages[-1].content


def test_malformed_call_becomes_corrective_turn_and_loop_continues(ctx):
    doc = one_clause_doc()
    llm = ScriptedSession(
        ["t1", "no json at all", "still nothing", "t2", tc("none")]
    )
    run_clause(doc, 0, llm, ctx)
    turns = doc.turns[0]
    assert len(turns) == 2
    assert turns[0].tool_call.tool == ""
    assert turns[0].feedback.kind == "corrective"
    assert "malformed" in turns[0].feedback.message
    assert turns[1].tool_call.tool == "none"
    assert llm.consumed == 5


def test_malformed_call_keeps_best_effort_tool_name(ctx):
    doc = one_clause_doc()
    llm = ScriptedSession(
        [
            "t1",
            '{"tool": "value_in", "args": "oops"}',
            '{"tool": 42}',
            "t2",
            tc("none"),
        ]
    )
    run_clause(doc, 0, llm, ctx)
    assert doc.turns[0][0].tool_call.tool == "value_in"
    assert doc.turns[0][0].tool_call.args == {}
    assert doc.turns[0][0].feedback.kind == "corrective"


def test_exhausted_session_leaves_partial_trace(ctx):
    doc = one_clause_doc()
    llm = ScriptedSession(["t1", tc("value_in", table="frpm", column="Low Grade", value="K"), "t2"])
    run_clause(doc, 0, llm, ctx)
    assert len(doc.turns[0]) == 1
    assert doc.turns[0][0].feedback.kind == "standard"
    assert llm.consumed == 3


# --- run_lookup ---


def test_run_lookup_covers_all_clauses(ctx):
    doc = two_clause_doc()
    llm = ScriptedSession(["a", tc("none"), "b", tc("none")])
    run_lookup(doc, llm, ctx)
    assert [len(col) for col in doc.turns] == [1, 1]
    assert all(col[-1].tool_call.tool == "none" for col in doc.turns)
    assert llm.consumed == 4


def test_run_lookup_global_budget_stops_midstream(ctx):
    doc = two_clause_doc()
    llm = ScriptedSession(["a", tc("value_in", table="frpm", column="Low Grade", value="K")])
    run_lookup(doc, llm, ctx, global_budget=1)
    assert [len(col) for col in doc.turns] == [1, 0]
    assert llm.consumed == 2


# --- harvest_linkings ---


def probe_doc():
    doc = one_clause_doc()
    doc.turns[0].append(
        Turn(
            thought="check grades",
            tool_call=ToolCall("uniq_value", {"table": "frpm", "column": "Low Grade"}),
            feedback=ToolFeedback.standard(
                {"distinct_count": 4, "samples": ["1", "6", "9", "K"]}
            ),
        )
    )
    return doc


def proposal(**over):
    base = {
        "kind": "value",
        "table": "frpm",
        "column": "Low Grade",
        "literal": "K",
        "rationale": "K appears in the samples",
        "source_turn": [0, 0],
    }
    base.update(over)
    return base


def test_harvest_keeps_grounded_value_linking():
    doc = probe_doc()
    llm = ScriptedSession([json.dumps([proposal()])])
    out = harvest_linkings(doc, llm)
    assert len(out) == 1
    link = out[0]
    assert (link.kind, link.table, link.column, link.literal) == (
        "value",
        "frpm",
        "Low Grade",
        "K",
    )
    assert link.source_turn == (0, 0)
    req = llm.requests[0]
    assert req.temperature == HARVEST_TEMPERATURE
    assert '"samples"' in req.messages[-1].content


def test_harvest_drops_ungrounded_proposals():
    doc = probe_doc()
    llm = ScriptedSession(
        [
            json.dumps(
                [
                    proposal(column="Nonexistent"),
                    proposal(literal="Z"),
                    proposal(column="low grade"),
                ]
            )
        ]
    )
    assert harvest_linkings(doc, llm) == []


def test_harvest_relocates_bad_source_turn():
    doc = probe_doc()
    llm = ScriptedSession([json.dumps([proposal(source_turn=[5, 9])])])
    out = harvest_linkings(doc, llm)
    assert len(out) == 1
    assert out[0].source_turn == (0, 0)


def test_harvest_relocates_source_pointing_at_corrective_turn():
    doc = one_clause_doc()
    doc.turns[0].append(
        Turn(
            thought="bad",
            tool_call=ToolCall("value_in", {"table": "frpm", "column": "No Such", "value": "K"}),
            feedback=ToolFeedback.corrective("no such column: No Such"),
        )
    )
    doc.turns[0].append(
        Turn(
            thought="fixed",
            tool_call=ToolCall("uniq_value", {"table": "frpm", "column": "Low Grade"}),
            feedback=ToolFeedback.standard({"distinct_count": 4, "samples": ["K"]}),
        )
    )
    llm = ScriptedSession([json.dumps([proposal(source_turn=[0, 0])])])
    out = harvest_linkings(doc, llm)
    assert len(out) == 1
    assert out[0].source_turn == (0, 1)


def test_harvest_mixed_keeps_only_grounded_in_order():
    doc = probe_doc()
    llm = ScriptedSession(
        [
            json.dumps(
                [
                    proposal(),
                    proposal(table="made_up"),
                    {
                        "kind": "schema",
                        "table": "frpm",
                        "column": None,
                        "literal": None,
                        "rationale": "table exists",
                        "source_turn": [0, 0],
                    },
                    "not even an object",
                ]
            )
        ]
    )
    out = harvest_linkings(doc, llm)
    assert [l.kind for l in out] == ["value", "schema"]


def test_harvest_coerces_numeric_literal_to_text():
    doc = probe_doc()
    llm = ScriptedSession([json.dumps([proposal(literal=4)])])
    out = harvest_linkings(doc, llm)
    assert len(out) == 1
    assert out[0].literal == "4"


def test_harvest_on_corrective_only_doc_is_empty():
    doc = one_clause_doc()
    doc.turns[0].append(
        Turn(
            thought="bad",
            tool_call=ToolCall("value_in", {"table": "frpm", "column": "No Such", "value": "K"}),
            feedback=ToolFeedback.corrective("no such column: No Such"),
        )
    )
    llm = ScriptedSession([json.dumps([proposal()])])
    assert harvest_linkings(doc, llm) == []


def test_harvest_parse_failure_yields_empty_list():
    doc = probe_doc()
    llm = ScriptedSession(["I could not find any linkings."])
    assert harvest_linkings(doc, llm) == []


def test_harvest_propagates_exhausted_script():
    doc = probe_doc()
    with pytest.raises(ScriptExhausted):
        harvest_linkings(doc, ScriptedSession([]))
