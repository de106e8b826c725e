"""Atomic database probing tools.

Nine tools: eight probes plus the stop signal. Each carries three guidance
parts (description, required parameters, scenario) rendered into one
deterministic prompt block. dispatch() is total: every failure becomes
corrective feedback carrying the engine's or validator's message, never an
exception into the loop.
"""

from __future__ import annotations

import random as _random_mod
from dataclasses import dataclass
from typing import Any

from .cotf import TOOL_NAMES, ToolCall, ToolFeedback, jsonify
from .database import DatabaseHandle, SchemaCatalog, quote_identifier
from .embedding import rank_lexical, top_k, trigrams
from .errors import (
    DiverError,
    EmbedderUnavailable,
    MissingGuidancePart,
    SqlError,
    UnknownColumn,
    UnknownTable,
)

POOL_CAP = 10_000  # embed the whole distinct-value pool up to this size
PREFILTER_SIZE = 1_000  # larger pools are cut down by trigram overlap first
DEFAULT_K = 5
DEFAULT_SAMPLE_LIMIT = 20


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    required_params: tuple[str, ...]
    optional_params: tuple[str, ...]
    scenario: str


REGISTRY: dict[str, ToolSpec] = {
    spec.name: spec
    for spec in [
        ToolSpec(
            name="value_in",
            description="Exact membership check: does the column store the given value?",
            required_params=("table", "column", "value"),
            optional_params=(),
            scenario=(
                "The clause quotes a literal and you need to confirm the column"
                " stores it exactly as written, including case."
            ),
        ),
        ToolSpec(
            name="sim_value_in",
            description="Fuzzy search: rank the column's stored values by similarity to a query string.",
            required_params=("table", "column", "query_text"),
            optional_params=("k",),
            scenario=(
                "An exact membership check came back empty and you suspect the"
                " stored spelling differs from the question's wording."
            ),
        ),
        ToolSpec(
            name="uniq_value",
            description="Count distinct values in a column and list a sorted sample of them.",
            required_params=("table", "column"),
            optional_params=("limit",),
            scenario=(
                "The column's vocabulary is unclear; enumerate a bounded sample"
                " of its distinct entries to see how values are written."
            ),
        ),
        ToolSpec(
            name="head",
            description="Fetch the first n rows of a table in storage order.",
            required_params=("table", "n"),
            optional_params=(),
            scenario=(
                "You want a feel for realistic full rows before probing"
                " specific columns."
            ),
        ),
        ToolSpec(
            name="random",
            description="Fetch n rows sampled without replacement, reproducibly by seed.",
            required_params=("table", "n"),
            optional_params=("seed",),
            scenario=(
                "You want rows drawn from across the whole table instead of the"
                " possibly unrepresentative leading block."
            ),
        ),
        ToolSpec(
            name="if_null",
            description="Count NULL entries in a column and report the missing fraction.",
            required_params=("table", "column"),
            optional_params=(),
            scenario=(
                "Aggregates or joins may be skewed by missing entries; measure"
                " how sparse the column is first."
            ),
        ),
        ToolSpec(
            name="info",
            description=(
                "Describe a table or one column: declared type, attached"
                " description, row count and missing fraction."
            ),
            required_params=("table",),
            optional_params=("column",),
            scenario=(
                "You need a column's declared type or its documentation, e.g."
                " to decode an abbreviation the question uses."
            ),
        ),
        ToolSpec(
            name="sim_columns",
            description="Rank every catalog column by similarity to a query string.",
            required_params=("query_text",),
            optional_params=("k",),
            scenario=(
                "No column probed so far fits the clause; search the whole"
                " schema by meaning for better candidates."
            ),
        ),
        ToolSpec(
            name="none",
            description="Finish the current clause: no further probing is needed.",
            required_params=(),
            optional_params=(),
            scenario=(
                "Every fact the clause needs has been verified (or probing is"
                " clearly exhausted); end this clause's loop."
            ),
        ),
    ]
}

assert tuple(REGISTRY) == TOOL_NAMES


@dataclass
class ToolContext:
    """Everything dispatch needs besides the call itself. rng is the live-mode
    seed source for `random`; replay runs pass rng=None and rely on recorded
    seeds."""

    handle: DatabaseHandle
    catalog: SchemaCatalog
    embedder: Any
    rng: _random_mod.Random | None = None


def render_guidance(registry: dict[str, ToolSpec] | None = None) -> str:
    """Deterministic tool-guidance block for prompts: all nine tools in fixed
    order, each with description, parameter list and usage scenario."""
    registry = REGISTRY if registry is None else registry
    lines = [
        "Atomic database tools",
        "=====================",
        'Call exactly one tool per turn as JSON: {"tool": "<name>", "args": {...}}.',
        "",
    ]
    for name in registry:
        spec = registry[name]
        if not spec.description:
            raise MissingGuidancePart(f"{name}: missing description")
        if not spec.scenario:
            raise MissingGuidancePart(f"{name}: missing scenario")
        if not spec.required_params and name != "none":
            raise MissingGuidancePart(f"{name}: missing required parameters")
        lines.append(f"### {spec.name}")
        lines.append(spec.description)
        if spec.required_params:
            lines.append("Required parameters: " + ", ".join(spec.required_params))
        else:
            lines.append("Required parameters: (no arguments)")
        if spec.optional_params:
            lines.append("Optional parameters: " + ", ".join(spec.optional_params))
        lines.append("Scenario: " + spec.scenario)
        lines.append("")
    return "\n".join(lines)


def _scalarize(value: Any) -> Any:
    if isinstance(value, bytes):
        return "0x" + value.hex()
    return value


def _rows_payload(columns: list[str], rows: list[tuple]) -> dict[str, Any]:
    return {
        "columns": list(columns),
        "rows": [[_scalarize(v) for v in row] for row in rows],
    }


def value_in(handle: DatabaseHandle, table: str, column: str, value: Any) -> dict[str, Any]:
    """Exact, case-sensitive membership test (SQL equality; no coercion, so a
    string "1" does not match integer 1)."""
    rs = handle.query(
        f"SELECT COUNT(*) FROM {quote_identifier(table)}"
        f" WHERE {quote_identifier(column)} = ?",
        (value,),
    )
    count = rs.rows[0][0]
    return {"exists": count > 0, "match_count": count}


def uniq_value(
    handle: DatabaseHandle, table: str, column: str, limit: int = DEFAULT_SAMPLE_LIMIT
) -> dict[str, Any]:
    """Distinct count plus the first `limit` distinct values, ascending by
    their text form. NULLs are excluded, matching COUNT(DISTINCT)."""
    q_table, q_col = quote_identifier(table), quote_identifier(column)
    count = handle.query(f"SELECT COUNT(DISTINCT {q_col}) FROM {q_table}").rows[0][0]
    rs = handle.query(
        f"SELECT DISTINCT CAST({q_col} AS TEXT) AS v FROM {q_table}"
        f" WHERE {q_col} IS NOT NULL ORDER BY v LIMIT ?",
        (limit,),
    )
    return {"distinct_count": count, "samples": [r[0] for r in rs.rows]}


def head(handle: DatabaseHandle, table: str, n: int) -> dict[str, Any]:
    rs = handle.query(f"SELECT * FROM {quote_identifier(table)} LIMIT ?", (n,))
    return _rows_payload(rs.columns, rs.rows)


def random_rows(handle: DatabaseHandle, table: str, n: int, seed: int) -> dict[str, Any]:
    """n rows without replacement, reproducible from (database file, seed)."""
    total = handle.query(f"SELECT COUNT(*) FROM {quote_identifier(table)}").rows[0][0]
    k = min(n, total)
    chosen = set(_random_mod.Random(seed).sample(range(total), k)) if k else set()
    rs = handle.query(f"SELECT * FROM {quote_identifier(table)}")
    picked = [row for i, row in enumerate(rs.rows) if i in chosen]
    payload = _rows_payload(rs.columns, picked)
    payload["seed"] = seed
    return payload


def if_null(handle: DatabaseHandle, table: str, column: str) -> dict[str, Any]:
    rs = handle.query(
        f"SELECT COUNT(*), COUNT({quote_identifier(column)})"
        f" FROM {quote_identifier(table)}"
    )
    total, nonnull = rs.rows[0]
    nulls = total - nonnull
    return {"null_count": nulls, "total": total, "fraction": nulls / max(total, 1)}


def _null_fractions(handle: DatabaseHandle, table) -> dict[str, float]:
    counters = ", ".join(f"COUNT({quote_identifier(c.name)})" for c in table.columns)
    rs = handle.query(f"SELECT COUNT(*), {counters} FROM {quote_identifier(table.name)}")
    row = rs.rows[0]
    total = row[0]
    return {
        c.name: (total - row[i + 1]) / max(total, 1) for i, c in enumerate(table.columns)
    }


def info(
    handle: DatabaseHandle,
    catalog: SchemaCatalog,
    table: str,
    column: str | None = None,
) -> dict[str, Any]:
    """Metadata for one column, or a per-column summary of a whole table."""
    t = catalog.table(table)
    if t is None:
        raise UnknownTable(f"unknown table: {table}")
    fractions = _null_fractions(handle, t)
    if column is not None:
        c = t.column(column)
        if c is None:
            raise UnknownColumn(f"unknown column: {table}.{column}")
        return {
            "table": t.name,
            "column": c.name,
            "declared_type": c.declared_type,
            "description": c.description,
            "row_count": t.row_count,
            "null_fraction": fractions[c.name],
        }
    return {
        "table": t.name,
        "row_count": t.row_count,
        "columns": [
            {
                "column": c.name,
                "declared_type": c.declared_type,
                "description": c.description,
                "null_fraction": fractions[c.name],
            }
            for c in t.columns
        ],
    }


def _rank(embedder, query_text: str, candidates: list[str], k: int):
    """top_k with automatic downgrade to trigram-Jaccard scoring when the
    embedding provider is unavailable."""
    try:
        return top_k(embedder, query_text, candidates, k), "embedding"
    except EmbedderUnavailable:
        return rank_lexical(query_text, candidates, k), "lexical"


def sim_value_in(
    handle: DatabaseHandle,
    embedder,
    table: str,
    column: str,
    query_text: str,
    k: int = DEFAULT_K,
) -> dict[str, Any]:
    """Top-k distinct values of one column by similarity to query_text.

    Pools of more than POOL_CAP distinct values are first cut to
    PREFILTER_SIZE by raw trigram overlap so the embedding step stays bounded.
    """
    q_table, q_col = quote_identifier(table), quote_identifier(column)
    rs = handle.query(
        f"SELECT DISTINCT CAST({q_col} AS TEXT) AS v FROM {q_table}"
        f" WHERE {q_col} IS NOT NULL ORDER BY v"
    )
    pool = [r[0] for r in rs.rows]
    pool_size = len(pool)
    prefiltered = pool_size > POOL_CAP
    if prefiltered:
        query_grams = trigrams(query_text)
        overlap = sorted(
            range(pool_size),
            key=lambda i: (-len(query_grams & trigrams(pool[i])), pool[i]),
        )
        pool = [pool[i] for i in overlap[:PREFILTER_SIZE]]
    if not pool:
        return {"matches": [], "pool_size": 0, "prefiltered": False, "scoring": "embedding"}
    ranked, scoring = _rank(embedder, query_text, pool, k)
    return {
        "matches": [{"value": pool[i], "score": round(s, 6)} for i, s in ranked],
        "pool_size": pool_size,
        "prefiltered": prefiltered,
        "scoring": scoring,
    }


def sim_columns(
    catalog: SchemaCatalog, embedder, query_text: str, k: int = DEFAULT_K
) -> dict[str, Any]:
    """Rank all catalog columns by similarity of query_text to
    "table.column <description>"."""
    entries = []
    for t in catalog.tables:
        for c in t.columns:
            text = f"{t.name}.{c.name}"
            if c.description:
                text += f" {c.description}"
            entries.append((t.name, c.name, text))
    if not entries:
        return {"matches": [], "scoring": "embedding"}
    ranked, scoring = _rank(embedder, query_text, [e[2] for e in entries], k)
    return {
        "matches": [
            {"table": entries[i][0], "column": entries[i][1], "score": round(s, 6)}
            for i, s in ranked
        ],
        "scoring": scoring,
    }


_INT_PARAMS = {"n", "k", "limit", "seed"}
_STR_PARAMS = {"table", "column", "query_text"}
_MIN_ONE = {"n", "k", "limit"}


def validate_call(call: ToolCall) -> str | None:
    """Return an error message for a bad call, or None when it is well formed.
    Validation failures never raise: the message becomes corrective feedback
    (or a repair prompt at the client)."""
    spec = REGISTRY.get(call.tool)
    if spec is None:
        return f"unknown tool: {call.tool!r}"
    missing = [p for p in spec.required_params if p not in call.args]
    if missing:
        return f"missing required parameter(s): {', '.join(missing)}"
    allowed = set(spec.required_params) | set(spec.optional_params)
    extra = [p for p in call.args if p not in allowed]
    if extra:
        if not allowed:
            return f"{call.tool} takes no arguments, got: {', '.join(extra)}"
        return f"unexpected parameter(s): {', '.join(extra)}"
    for name, value in call.args.items():
        if name in _STR_PARAMS:
            if not isinstance(value, str) or not value:
                return f"parameter {name!r} must be a non-empty string"
        elif name in _INT_PARAMS:
            if not isinstance(value, int) or isinstance(value, bool):
                return f"parameter {name!r} must be an integer"
            if name in _MIN_ONE and value < 1:
                return f"parameter {name!r} must be at least 1"
    return None


def dispatch(call: ToolCall, context: ToolContext) -> ToolFeedback:
    """Execute one validated call. Success -> standard feedback with the tool's
    structured result; any failure -> corrective feedback, engine messages
    verbatim. Never raises for tool-level problems."""
    error = validate_call(call)
    if error is not None:
        return ToolFeedback.corrective(error)
    args = call.args
    try:
        if call.tool == "none":
            return ToolFeedback.standard({})
        if call.tool == "value_in":
            result = value_in(context.handle, args["table"], args["column"], args["value"])
        elif call.tool == "sim_value_in":
            result = sim_value_in(
                context.handle,
                context.embedder,
                args["table"],
                args["column"],
                args["query_text"],
                k=args.get("k", DEFAULT_K),
            )
        elif call.tool == "uniq_value":
            result = uniq_value(
                context.handle,
                args["table"],
                args["column"],
                limit=args.get("limit", DEFAULT_SAMPLE_LIMIT),
            )
        elif call.tool == "head":
            result = head(context.handle, args["table"], args["n"])
        elif call.tool == "random":
            if "seed" not in args:
                if context.rng is None:
                    return ToolFeedback.corrective(
                        "random requires an explicit seed when no run RNG is"
                        " configured (replay mode)"
                    )
                # draw and record the seed into the call so the trace replays
                args["seed"] = context.rng.randrange(2**32)
            result = random_rows(context.handle, args["table"], args["n"], args["seed"])
        elif call.tool == "if_null":
            result = if_null(context.handle, args["table"], args["column"])
        elif call.tool == "info":
            result = info(context.handle, context.catalog, args["table"], args.get("column"))
        elif call.tool == "sim_columns":
            result = sim_columns(
                context.catalog, context.embedder, args["query_text"], k=args.get("k", DEFAULT_K)
            )
        else:  # pragma: no cover - registry and branch list must stay in sync
            return ToolFeedback.corrective(f"unknown tool: {call.tool!r}")
    except SqlError as exc:
        return ToolFeedback.corrective(str(exc))
    except (UnknownTable, UnknownColumn) as exc:
        return ToolFeedback.corrective(str(exc))
    except DiverError as exc:
        return ToolFeedback.corrective(f"{type(exc).__name__}: {exc}")
    return ToolFeedback.standard(jsonify(result))
