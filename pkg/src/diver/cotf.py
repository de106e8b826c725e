"""Chain-of-thoughts-and-facts workspace.

A document holds one question, its clause partition, one turn column per
clause (thought, tool call, feedback), and the verified linkings harvested at
the end. The whole document serializes to canonical JSON (sorted keys, UTF-8,
two-space indent, trailing newline) so replayed runs are byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from .errors import (
    ClauseTerminated,
    IndexOutOfBounds,
    SchemaViolation,
    TurnBudgetExceeded,
)
from .tokens import tokenize

SCHEMA_VERSION = 1

# order matters: guidance and prompts render tools in this sequence, with the
# stop signal last
TOOL_NAMES = (
    "value_in",
    "sim_value_in",
    "uniq_value",
    "head",
    "random",
    "if_null",
    "info",
    "sim_columns",
    "none",
)

FEEDBACK_KINDS = ("standard", "corrective", "guiding")
LINKING_KINDS = ("value", "schema", "function")
EVIDENCE_STYLES = ("long", "concise")

Scalar = str | int | float | bool | None


def _is_scalar(v: Any) -> bool:
    return v is None or isinstance(v, (str, int, float, bool))


def jsonify(value: Any) -> Any:
    """Normalize a payload to JSON-native types (tuples become lists).

    Raises SchemaViolation on anything json.dumps could not represent. Used at
    feedback construction time so round-tripping a document through the codec
    is structurally lossless.
    """
    if _is_scalar(value):
        return value
    if isinstance(value, (list, tuple)):
        return [jsonify(v) for v in value]
    if isinstance(value, dict):
        out = {}
        for k, v in value.items():
            if not isinstance(k, str):
                raise SchemaViolation(f"payload keys must be strings, got {k!r}")
            out[k] = jsonify(v)
        return out
    raise SchemaViolation(f"payload value is not JSON-representable: {value!r}")


@dataclass
class Question:
    question_id: str
    db_id: str
    text: str
    gold_sql: str | None = None
    expert_evidence: str | None = None
    difficulty: str | None = None

    def __post_init__(self) -> None:
        for name in ("question_id", "db_id", "text"):
            v = getattr(self, name)
            if not isinstance(v, str) or not v:
                raise SchemaViolation(f"question.{name} must be a non-empty string")
        for name in ("gold_sql", "expert_evidence", "difficulty"):
            v = getattr(self, name)
            if v is not None and not isinstance(v, str):
                raise SchemaViolation(f"question.{name} must be a string or null")


@dataclass(frozen=True)
class Clause:
    index: int
    text: str
    token_span: tuple[int, int]  # half-open token indices into the question

    def __post_init__(self) -> None:
        if not isinstance(self.index, int) or self.index < 0:
            raise SchemaViolation("clause.index must be a non-negative integer")
        if not isinstance(self.text, str) or not self.text:
            raise SchemaViolation("clause.text must be a non-empty string")
        span = self.token_span
        if (
            not isinstance(span, tuple)
            or len(span) != 2
            or not all(isinstance(x, int) for x in span)
            or not 0 <= span[0] < span[1]
        ):
            raise SchemaViolation(f"clause.token_span malformed: {span!r}")


@dataclass
class ToolCall:
    tool: str
    args: dict[str, Scalar]

    def __post_init__(self) -> None:
        # tool stays a plain string so hallucinated names can be recorded and
        # replayed; TOOL_NAMES membership is checked at dispatch time
        if not isinstance(self.tool, str):
            raise SchemaViolation("tool_call.tool must be a string")
        if not isinstance(self.args, dict):
            raise SchemaViolation("tool_call.args must be a mapping")
        for k, v in self.args.items():
            if not isinstance(k, str):
                raise SchemaViolation("tool_call arg names must be strings")
            if not _is_scalar(v):
                raise SchemaViolation(f"tool_call arg {k!r} must be a scalar, got {v!r}")


@dataclass
class ToolFeedback:
    kind: str
    message: str = ""
    result: dict[str, Any] | None = None

    def __post_init__(self) -> None:
        if self.kind not in FEEDBACK_KINDS:
            raise SchemaViolation(f"unknown feedback kind: {self.kind!r}")
        if not isinstance(self.message, str):
            raise SchemaViolation("feedback.message must be a string")
        if self.kind == "standard":
            if self.result is None:
                raise SchemaViolation("standard feedback requires a result payload")
            if not isinstance(self.result, dict):
                raise SchemaViolation("feedback.result must be a mapping")
            self.result = jsonify(self.result)
        else:
            if self.result is not None:
                raise SchemaViolation(f"{self.kind} feedback must not carry a result")
            if not self.message:
                raise SchemaViolation(f"{self.kind} feedback requires a message")

    @classmethod
    def standard(cls, result: dict[str, Any], message: str = "") -> "ToolFeedback":
        return cls(kind="standard", message=message, result=result)

    @classmethod
    def corrective(cls, message: str) -> "ToolFeedback":
        return cls(kind="corrective", message=message, result=None)

    @classmethod
    def guiding(cls, message: str) -> "ToolFeedback":
        return cls(kind="guiding", message=message, result=None)


@dataclass
class Turn:
    thought: str
    tool_call: ToolCall
    feedback: ToolFeedback

    def __post_init__(self) -> None:
        if not isinstance(self.thought, str):
            raise SchemaViolation("turn.thought must be a string")
        if not isinstance(self.tool_call, ToolCall):
            raise SchemaViolation("turn.tool_call must be a ToolCall")
        if not isinstance(self.feedback, ToolFeedback):
            raise SchemaViolation("turn.feedback must be a ToolFeedback")


@dataclass
class VerifiedLinking:
    kind: str
    table: str | None
    column: str | None
    literal: str | None
    rationale: str
    source_turn: tuple[int, int]  # (clause index, turn index) of the proof

    def __post_init__(self) -> None:
        if self.kind not in LINKING_KINDS:
            raise SchemaViolation(f"unknown linking kind: {self.kind!r}")
        if self.kind == "value" and not (self.table and self.column and self.literal is not None):
            raise SchemaViolation("value linking requires table, column and literal")
        if self.kind == "schema" and not self.table:
            raise SchemaViolation("schema linking requires a table")
        if not isinstance(self.rationale, str):
            raise SchemaViolation("linking.rationale must be a string")
        st = self.source_turn
        if (
            not isinstance(st, tuple)
            or len(st) != 2
            or not all(isinstance(x, int) and x >= 0 for x in st)
        ):
            raise SchemaViolation(f"linking.source_turn malformed: {st!r}")


@dataclass
class CoTFDocument:
    question: Question
    clauses: list[Clause]
    turns: list[list[Turn]] = field(default_factory=list)
    verified: list[VerifiedLinking] = field(default_factory=list)
    max_turns: int = 5

    def __post_init__(self) -> None:
        if not isinstance(self.max_turns, int) or self.max_turns < 1:
            raise SchemaViolation("max_turns must be a positive integer")
        if not self.clauses:
            raise SchemaViolation("document needs at least one clause")
        self._check_partition()
        if not self.turns:
            self.turns = [[] for _ in self.clauses]
        if len(self.turns) != len(self.clauses):
            raise SchemaViolation("turns must hold one list per clause")
        for ci, column in enumerate(self.turns):
            if len(column) > self.max_turns:
                raise SchemaViolation(f"clause {ci} exceeds max_turns={self.max_turns}")
            for ti, turn in enumerate(column):
                if ti > 0 and column[ti - 1].tool_call.tool == "none":
                    raise SchemaViolation(f"clause {ci} has a turn after its stop signal")
                if not isinstance(turn, Turn):
                    raise SchemaViolation("turns must contain Turn objects")
        for link in self.verified:
            self._check_source(link)

    def _check_partition(self) -> None:
        toks = tokenize(self.question.text)
        if not toks:
            raise SchemaViolation("question text has no tokens")
        expect_start = 0
        for i, cl in enumerate(self.clauses):
            if cl.index != i:
                raise SchemaViolation(f"clause {i} carries index {cl.index}")
            s, e = cl.token_span
            if s != expect_start:
                raise SchemaViolation(
                    f"clause {i} span starts at token {s}, expected {expect_start}"
                )
            if e > len(toks):
                raise SchemaViolation(f"clause {i} span runs past the question")
            verbatim = self.question.text[toks[s].start : toks[e - 1].end]
            if cl.text != verbatim:
                raise SchemaViolation(
                    f"clause {i} text is not the verbatim token span: {cl.text!r} != {verbatim!r}"
                )
            expect_start = e
        if expect_start != len(toks):
            raise SchemaViolation("clauses do not cover the full question token sequence")

    def _check_source(self, link: VerifiedLinking) -> None:
        ci, ti = link.source_turn
        if ci >= len(self.clauses) or ti >= len(self.turns[ci]):
            raise SchemaViolation(f"linking source_turn {link.source_turn} does not exist")
        if self.turns[ci][ti].feedback.kind != "standard":
            raise SchemaViolation(
                f"linking source_turn {link.source_turn} is not a standard-feedback turn"
            )

    def add_verified(self, link: VerifiedLinking) -> None:
        self._check_source(link)
        self.verified.append(link)


@dataclass
class Evidence:
    """One synthesized evidence text plus how it was produced. source keeps
    the workspace it was grounded against."""

    style: str
    text: str
    candidate_count: int
    source: CoTFDocument

    def __post_init__(self) -> None:
        if self.style not in EVIDENCE_STYLES:
            raise SchemaViolation(f"unknown evidence style: {self.style!r}")
        if not isinstance(self.text, str):
            raise SchemaViolation("evidence.text must be a string")
        if not isinstance(self.candidate_count, int) or self.candidate_count < 1:
            raise SchemaViolation("evidence.candidate_count must be a positive integer")
        if not isinstance(self.source, CoTFDocument):
            raise SchemaViolation("evidence.source must be a CoTFDocument")
        if self.source.verified and not self.text.strip():
            raise SchemaViolation("evidence must not be empty when linkings were verified")


def _collect_strings(value: Any, into: set[str]) -> None:
    if isinstance(value, str):
        into.add(value)
    elif isinstance(value, bool):
        pass
    elif isinstance(value, (int, float)):
        into.add(str(value))
    elif isinstance(value, dict):
        for v in value.values():
            _collect_strings(v, into)
    elif isinstance(value, (list, tuple)):
        for v in value:
            _collect_strings(v, into)


def turn_facts(turn: Turn) -> set[str]:
    """Every string a successful probe put on the record: its arguments plus
    its result payload. Empty for corrective and guiding turns."""
    if turn.feedback.kind != "standard":
        return set()
    facts: set[str] = set()
    _collect_strings(dict(turn.tool_call.args), facts)
    _collect_strings(turn.feedback.result, facts)
    return facts


def document_facts(doc: CoTFDocument) -> set[str]:
    """Union of turn_facts over the whole document."""
    facts: set[str] = set()
    for column in doc.turns:
        for turn in column:
            facts |= turn_facts(turn)
    return facts


def append_turn(doc: CoTFDocument, clause_index: int, turn: Turn) -> CoTFDocument:
    """Append a turn to one clause, enforcing termination and budget rules."""
    if not 0 <= clause_index < len(doc.clauses):
        raise IndexOutOfBounds(f"clause index {clause_index} out of range")
    column = doc.turns[clause_index]
    if column and column[-1].tool_call.tool == "none":
        raise ClauseTerminated(f"clause {clause_index} already ended with none")
    if len(column) >= doc.max_turns:
        raise TurnBudgetExceeded(
            f"clause {clause_index} already holds {doc.max_turns} turns"
        )
    column.append(turn)
    return doc


def detect_repeat(doc: CoTFDocument, clause_index: int, call: ToolCall) -> bool:
    """True when an earlier turn in the same clause made the identical call
    (same tool, identical args)."""
    if not 0 <= clause_index < len(doc.clauses):
        raise IndexOutOfBounds(f"clause index {clause_index} out of range")
    return any(t.tool_call == call for t in doc.turns[clause_index])


def _question_payload(q: Question) -> dict[str, Any]:
    return {
        "question_id": q.question_id,
        "db_id": q.db_id,
        "text": q.text,
        "gold_sql": q.gold_sql,
        "expert_evidence": q.expert_evidence,
        "difficulty": q.difficulty,
    }


def serialize(doc: CoTFDocument) -> bytes:
    """Canonical JSON bytes: sorted keys, UTF-8, indent 2, trailing newline."""
    payload = {
        "schema_version": SCHEMA_VERSION,
        "question": _question_payload(doc.question),
        "clauses": [
            {"index": c.index, "text": c.text, "token_span": list(c.token_span)}
            for c in doc.clauses
        ],
        "turns": [
            [
                {
                    "thought": t.thought,
                    "tool_call": {"tool": t.tool_call.tool, "args": t.tool_call.args},
                    "feedback": {
                        "kind": t.feedback.kind,
                        "message": t.feedback.message,
                        "result": t.feedback.result,
                    },
                }
                for t in column
            ]
            for column in doc.turns
        ],
        "verified": [
            {
                "kind": v.kind,
                "table": v.table,
                "column": v.column,
                "literal": v.literal,
                "rationale": v.rationale,
                "source_turn": list(v.source_turn),
            }
            for v in doc.verified
        ],
        "max_turns": doc.max_turns,
    }
    text = json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2) + "\n"
    return text.encode("utf-8")


def _expect(condition: bool, message: str) -> None:
    if not condition:
        raise SchemaViolation(message)


def deserialize(data: bytes | str) -> CoTFDocument:
    """Parse canonical JSON back into a document. Anything that does not match
    the schema raises SchemaViolation."""
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SchemaViolation(f"not valid UTF-8: {exc}") from exc
    try:
        payload = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"not valid JSON: {exc}") from exc
    _expect(isinstance(payload, dict), "top level must be an object")
    required = {"schema_version", "question", "clauses", "turns", "verified", "max_turns"}
    missing = required - payload.keys()
    _expect(not missing, f"missing keys: {sorted(missing)}")
    _expect(
        payload["schema_version"] == SCHEMA_VERSION,
        f"unsupported schema_version: {payload['schema_version']!r}",
    )

    try:
        qp = payload["question"]
        _expect(isinstance(qp, dict), "question must be an object")
        question = Question(
            question_id=qp.get("question_id"),
            db_id=qp.get("db_id"),
            text=qp.get("text"),
            gold_sql=qp.get("gold_sql"),
            expert_evidence=qp.get("expert_evidence"),
            difficulty=qp.get("difficulty"),
        )
        clauses = []
        _expect(isinstance(payload["clauses"], list), "clauses must be a list")
        for cp in payload["clauses"]:
            _expect(isinstance(cp, dict), "clause must be an object")
            span = cp.get("token_span")
            _expect(
                isinstance(span, list) and len(span) == 2,
                f"token_span malformed: {span!r}",
            )
            clauses.append(
                Clause(index=cp.get("index"), text=cp.get("text"), token_span=(span[0], span[1]))
            )
        _expect(isinstance(payload["turns"], list), "turns must be a list")
        turns: list[list[Turn]] = []
        for column_payload in payload["turns"]:
            _expect(isinstance(column_payload, list), "turns entries must be lists")
            column = []
            for tp in column_payload:
                _expect(isinstance(tp, dict), "turn must be an object")
                cp2 = tp.get("tool_call")
                _expect(isinstance(cp2, dict), "tool_call must be an object")
                fp = tp.get("feedback")
                _expect(isinstance(fp, dict), "feedback must be an object")
                column.append(
                    Turn(
                        thought=tp.get("thought"),
                        tool_call=ToolCall(tool=cp2.get("tool"), args=cp2.get("args")),
                        feedback=ToolFeedback(
                            kind=fp.get("kind"),
                            message=fp.get("message", ""),
                            result=fp.get("result"),
                        ),
                    )
                )
            turns.append(column)
        verified = []
        _expect(isinstance(payload["verified"], list), "verified must be a list")
        for vp in payload["verified"]:
            _expect(isinstance(vp, dict), "linking must be an object")
            st = vp.get("source_turn")
            _expect(
                isinstance(st, list) and len(st) == 2,
                f"source_turn malformed: {st!r}",
            )
            verified.append(
                VerifiedLinking(
                    kind=vp.get("kind"),
                    table=vp.get("table"),
                    column=vp.get("column"),
                    literal=vp.get("literal"),
                    rationale=vp.get("rationale", ""),
                    source_turn=(st[0], st[1]),
                )
            )
        # empty turns lists are legal on the wire only when they match clauses
        if payload["turns"] == [] and clauses:
            raise SchemaViolation("turns must hold one list per clause")
        return CoTFDocument(
            question=question,
            clauses=clauses,
            turns=turns,
            verified=verified,
            max_turns=payload["max_turns"],
        )
    except SchemaViolation:
        raise
    except (TypeError, ValueError, KeyError, AttributeError) as exc:
        raise SchemaViolation(f"malformed document: {exc}") from exc
