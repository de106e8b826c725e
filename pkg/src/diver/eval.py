"""Metrics for generated SQL and evidence.

Covers execution accuracy (row multisets, order-sensitive only when the
reference query orders), a timing-weighted efficiency score, schema/value
entity extraction with F1, and evidence-to-SQL token overlap.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .database import DatabaseHandle, SchemaCatalog
from .database import catalog as build_catalog
from .database import open_database
from .errors import DiverError, ParseFailure

log = logging.getLogger(__name__)

# Reserved words that can never be column or table references.
RESERVED_WORDS = frozenset(
    """
    select from where group by having order limit offset as on join inner
    left right full outer cross natural using and or not in like glob regexp
    match escape between is null distinct all union except intersect case
    when then else end exists cast collate asc desc with recursive values
    true false over partition rows range unbounded preceding following
    current row filter window current_date current_time current_timestamp
    """.split()
)

# Words a bare identifier after a table name must not be mistaken for.
_NOT_AN_ALIAS = frozenset(
    w.upper()
    for w in (
        "on where group having order limit offset union except intersect"
        " join inner left right full outer cross natural using as and or"
        " set when then else end asc desc".split()
    )
)

_FUNCTION_WORDS = frozenset(
    """
    count sum avg total min max group_concat abs round length substr
    substring upper lower trim ltrim rtrim coalesce ifnull nullif iif instr
    replace printf date time datetime strftime julianday unixepoch rank
    row_number dense_rank ntile lag lead first_value last_value cume_dist
    percent_rank
    """.split()
)

# Excluded from the SQL side of token overlap.
OVERLAP_STOPWORDS = RESERVED_WORDS | _FUNCTION_WORDS

_COMPARISONS = frozenset({"=", "!=", "<>", "<", ">", "<=", ">="})
_OVERLAP_TOKEN_RE = re.compile(r"[a-z0-9]+")
_ORDER_BY_RE = re.compile(r"\border\s+by\b", re.IGNORECASE)
_STRING_BODY_RE = re.compile(r"'(?:[^']|'')*'")


@dataclass
class LinkingSets:
    """Entities a SQL query touches, normalized for comparison."""

    schema_entities: set[str]
    value_entities: set[str]
    parse_failed: bool = False


@dataclass
class EvalSample:
    question_id: str
    db_path: Path
    gold_sql: str
    pred_sql: str | None
    difficulty: str | None = None
    evidence_text: str | None = None


# --- SQL tokenizer ---


@dataclass
class _Tok:
    kind: str  # word | quoted | string | number | op
    value: str


_WORD_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_$]*")
_NUM_RE = re.compile(r"(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")
_QUOTE_CLOSERS = {'"': '"', "`": "`", "[": "]"}


def _tokenize_sql(sql: str) -> list[_Tok]:
    toks: list[_Tok] = []
    i, n = 0, len(sql)
    while i < n:
        ch = sql[i]
        if ch.isspace():
            i += 1
            continue
        if sql.startswith("--", i):
            j = sql.find("\n", i)
            i = n if j < 0 else j + 1
            continue
        if sql.startswith("/*", i):
            j = sql.find("*/", i + 2)
            if j < 0:
                raise ParseFailure("unterminated block comment")
            i = j + 2
            continue
        if ch == "'":
            j = i + 1
            buf: list[str] = []
            while True:
                if j >= n:
                    raise ParseFailure("unterminated string literal")
                if sql[j] == "'":
                    if j + 1 < n and sql[j + 1] == "'":
                        buf.append("'")
                        j += 2
                        continue
                    break
                buf.append(sql[j])
                j += 1
            toks.append(_Tok("string", "".join(buf)))
            i = j + 1
            continue
        if ch in _QUOTE_CLOSERS:
            j = sql.find(_QUOTE_CLOSERS[ch], i + 1)
            if j < 0:
                raise ParseFailure("unterminated quoted identifier")
            toks.append(_Tok("quoted", sql[i + 1 : j]))
            i = j + 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and sql[i + 1].isdigit()):
            m = _NUM_RE.match(sql, i)
            assert m is not None
            toks.append(_Tok("number", m.group()))
            i = m.end()
            continue
        m = _WORD_RE.match(sql, i)
        if m:
            toks.append(_Tok("word", m.group()))
            i = m.end()
            continue
        two = sql[i : i + 2]
        if two in ("<=", ">=", "<>", "!=", "||"):
            toks.append(_Tok("op", two))
            i += 2
            continue
        if ch in "=<>+-*/%,().;?:&|~":
            toks.append(_Tok("op", ch))
            i += 1
            continue
        raise ParseFailure(f"unexpected character {ch!r}")
    return toks


def _skip_parens(toks: list[_Tok], open_idx: int) -> int:
    """Index just past the parenthesis group opening at open_idx."""
    depth = 0
    i = open_idx
    while i < len(toks):
        t = toks[i]
        if t.kind == "op" and t.value == "(":
            depth += 1
        elif t.kind == "op" and t.value == ")":
            depth -= 1
            if depth == 0:
                return i + 1
        i += 1
    return len(toks)


def _is_word(tok: _Tok | None, word: str) -> bool:
    return tok is not None and tok.kind == "word" and tok.value.upper() == word


def _ident(tok: _Tok | None) -> bool:
    return tok is not None and tok.kind in ("word", "quoted")


def _norm_number(raw: str) -> str:
    s = raw.lower()
    if "e" in s:
        return s
    neg = s.startswith("-")
    body = s[1:] if neg else s
    if "." in body:
        body = body.rstrip("0").rstrip(".")
        if not body:
            body = "0"
    if "." in body:
        intpart, frac = body.split(".", 1)
        body = (intpart.lstrip("0") or "0") + "." + frac
    else:
        body = body.lstrip("0") or "0"
    return ("-" if neg else "") + body


def _norm_literal(tok: _Tok) -> str:
    if tok.kind == "string":
        return tok.value.lower()
    return _norm_number(tok.value)


class _Extractor:
    def __init__(self, toks: list[_Tok], catalog: SchemaCatalog | None):
        self.toks = toks
        self.catalog = catalog
        self.consumed = [False] * len(toks)
        self.ctes: set[str] = set()
        self.tables: set[str] = set()
        self.aliases: dict[str, str | None] = {}
        self.output_aliases: set[str] = set()
        self.schema: set[str] = set()
        self.values: set[str] = set()

    def tok(self, i: int) -> _Tok | None:
        return self.toks[i] if 0 <= i < len(self.toks) else None

    def run(self) -> LinkingSets:
        self._collect_ctes()
        self._collect_bindings()
        self._collect_output_aliases()
        self._collect_qualified()
        self._collect_unqualified()
        self._collect_values()
        self.schema.update(self.tables)
        return LinkingSets(self.schema, self.values)

    # CTE names must not be reported as schema tables.
    def _collect_ctes(self) -> None:
        toks = self.toks
        for i, t in enumerate(toks):
            if not _is_word(t, "WITH"):
                continue
            j = i + 1
            if _is_word(self.tok(j), "RECURSIVE"):
                j += 1
            while j < len(toks) and _ident(toks[j]):
                name = toks[j].value.lower()
                j += 1
                nxt = self.tok(j)
                if nxt is not None and nxt.kind == "op" and nxt.value == "(":
                    j = _skip_parens(toks, j)
                if not _is_word(self.tok(j), "AS"):
                    break
                j += 1
                nxt = self.tok(j)
                if nxt is None or nxt.kind != "op" or nxt.value != "(":
                    break
                self.ctes.add(name)
                j = _skip_parens(toks, j)
                nxt = self.tok(j)
                if nxt is not None and nxt.kind == "op" and nxt.value == ",":
                    j += 1
                    continue
                break

    def _bind_item(self, j: int) -> int:
        """Parse one table reference (or derived table) starting at j."""
        toks = self.toks
        t = self.tok(j)
        if t is None:
            return j
        if t.kind == "op" and t.value == "(":
            j = _skip_parens(toks, j)
            return self._bind_alias(j, None)
        if not _ident(t) or (t.kind == "word" and t.value.lower() in RESERVED_WORDS):
            return j
        name = t.value.lower()
        self.consumed[j] = True
        j += 1
        nxt = self.tok(j)
        if nxt is not None and nxt.kind == "op" and nxt.value == "." and _ident(self.tok(j + 1)):
            # schema-qualified table: keep the table part
            self.consumed[j] = True
            name = self.toks[j + 1].value.lower()
            self.consumed[j + 1] = True
            j += 2
        is_cte = name in self.ctes
        target = None if is_cte else name
        if not is_cte:
            self.tables.add(name)
        self.aliases.setdefault(name, target)
        return self._bind_alias(j, target)

    def _bind_alias(self, j: int, target: str | None) -> int:
        t = self.tok(j)
        if _is_word(t, "AS"):
            self.consumed[j] = True
            j += 1
            t = self.tok(j)
        if t is not None and _ident(t):
            if t.kind == "quoted" or t.value.upper() not in _NOT_AN_ALIAS:
                if t.kind == "word" and t.value.lower() in RESERVED_WORDS:
                    return j
                self.aliases[t.value.lower()] = target
                self.consumed[j] = True
                return j + 1
        return j

    def _collect_bindings(self) -> None:
        toks = self.toks
        for i, t in enumerate(toks):
            if self.consumed[i] or t.kind != "word":
                continue
            word = t.value.upper()
            if word == "FROM":
                self.consumed[i] = True
                j = self._bind_item(i + 1)
                while True:
                    nxt = self.tok(j)
                    if nxt is None or nxt.kind != "op" or nxt.value != ",":
                        break
                    advanced = self._bind_item(j + 1)
                    if advanced == j + 1:
                        break
                    j = advanced
            elif word == "JOIN":
                self.consumed[i] = True
                self._bind_item(i + 1)

    def _collect_output_aliases(self) -> None:
        for i, t in enumerate(self.toks):
            if self.consumed[i] or not _is_word(t, "AS"):
                continue
            nxt = self.tok(i + 1)
            if nxt is not None and _ident(nxt) and not self.consumed[i + 1]:
                self.output_aliases.add(nxt.value.lower())
                self.consumed[i + 1] = True
            self.consumed[i] = True

    def _collect_qualified(self) -> None:
        toks = self.toks
        for i, t in enumerate(toks):
            if self.consumed[i] or not _ident(t):
                continue
            dot = self.tok(i + 1)
            if dot is None or dot.kind != "op" or dot.value != ".":
                continue
            tail = self.tok(i + 2)
            qualifier = t.value.lower()
            if tail is not None and tail.kind == "op" and tail.value == "*":
                self.consumed[i] = self.consumed[i + 1] = self.consumed[i + 2] = True
                continue
            if tail is None or not _ident(tail):
                continue
            self.consumed[i] = self.consumed[i + 1] = self.consumed[i + 2] = True
            if qualifier in self.aliases:
                real = self.aliases[qualifier]
            elif qualifier in self.tables:
                real = qualifier
            else:
                # CTE column or unknown scope: not a schema entity
                real = None
            if real is not None:
                self.schema.add(real)
                self.schema.add(f"{real}.{tail.value.lower()}")

    def _column_owner(self, name: str) -> str | None:
        real = sorted(self.tables)
        if len(real) == 1:
            return real[0]
        if self.catalog is None:
            return None
        owners = []
        for table_name in real:
            info = self.catalog.table(table_name)
            if info is not None and info.column(name) is not None:
                owners.append(table_name)
        return owners[0] if len(owners) == 1 else None

    def _collect_unqualified(self) -> None:
        for i, t in enumerate(self.toks):
            if self.consumed[i] or not _ident(t):
                continue
            name = t.value.lower()
            if t.kind == "word":
                if t.value.lower() in RESERVED_WORDS:
                    continue
                nxt = self.tok(i + 1)
                if nxt is not None and nxt.kind == "op" and nxt.value == "(":
                    continue  # function call
            if name in self.aliases or name in self.ctes or name in self.output_aliases:
                continue
            owner = self._column_owner(name)
            if owner is not None:
                self.schema.add(f"{owner}.{name}")

    def _literal_at(self, j: int) -> tuple[str, int] | None:
        """Literal value starting at j, honoring a unary minus."""
        t = self.tok(j)
        if t is None:
            return None
        if t.kind == "op" and t.value == "-":
            nxt = self.tok(j + 1)
            if nxt is not None and nxt.kind == "number":
                return _norm_number("-" + nxt.value), j + 2
            return None
        if t.kind in ("string", "number"):
            return _norm_literal(t), j + 1
        return None

    def _left_literal(self, j: int) -> str | None:
        t = self.tok(j)
        if t is None or t.kind not in ("string", "number"):
            return None
        if t.kind == "number":
            prev = self.tok(j - 1)
            before = self.tok(j - 2)
            if (
                prev is not None
                and prev.kind == "op"
                and prev.value == "-"
                and (before is None or before.kind == "op")
            ):
                return _norm_number("-" + t.value)
        return _norm_literal(t)

    def _collect_values(self) -> None:
        toks = self.toks
        i = 0
        while i < len(toks):
            t = toks[i]
            if t.kind == "op" and t.value in _COMPARISONS:
                left = self._left_literal(i - 1)
                if left is not None:
                    self.values.add(left)
                right = self._literal_at(i + 1)
                if right is not None:
                    self.values.add(right[0])
                i += 1
                continue
            if t.kind == "word":
                word = t.value.upper()
                if word == "LIKE":
                    lit = self._literal_at(i + 1)
                    if lit is not None:
                        self.values.add(lit[0])
                elif word == "BETWEEN":
                    low = self._literal_at(i + 1)
                    if low is not None:
                        value, j = low
                        if _is_word(self.tok(j), "AND"):
                            high = self._literal_at(j + 1)
                            if high is not None:
                                self.values.add(value)
                                self.values.add(high[0])
                                i = high[1]
                                continue
                elif word == "IN":
                    nxt = self.tok(i + 1)
                    if nxt is not None and nxt.kind == "op" and nxt.value == "(":
                        first = self.tok(i + 2)
                        if _is_word(first, "SELECT") or _is_word(first, "WITH"):
                            i += 2
                            continue
                        end = _skip_parens(toks, i + 1)
                        j = i + 2
                        while j < end - 1:
                            lit = self._literal_at(j)
                            if lit is None:
                                j += 1
                            else:
                                self.values.add(lit[0])
                                j = lit[1]
                        i = end
                        continue
            i += 1


def extract_entities(sql: str, catalog: SchemaCatalog | None = None) -> LinkingSets:
    """Schema and value entities referenced by sql. Total: never raises."""
    if not isinstance(sql, str):
        return LinkingSets(set(), set(), parse_failed=True)
    try:
        toks = _tokenize_sql(sql)
        return _Extractor(toks, catalog).run()
    except ParseFailure:
        return LinkingSets(set(), set(), parse_failed=True)
    except Exception:  # defensive: extraction must be total
        log.exception("entity extraction failed on %r", sql[:80])
        return LinkingSets(set(), set(), parse_failed=True)


# --- F1 ---


def _prf(gold: set[str], pred: set[str]) -> dict[str, float]:
    inter = len(gold & pred)
    precision = inter / len(pred) if pred else 0.0
    recall = inter / len(gold) if gold else 0.0
    denom = precision + recall
    f1 = 2 * precision * recall / denom if denom else 0.0
    return {"precision": precision, "recall": recall, "f1": f1}


def linking_f1(gold: LinkingSets, pred: LinkingSets) -> dict[str, dict[str, float]]:
    return {
        "schema": _prf(gold.schema_entities, pred.schema_entities),
        "value": _prf(gold.value_entities, pred.value_entities),
    }


# --- token overlap ---


def token_overlap(evidence: str, sql: str, denominator: str = "sql") -> float:
    """Share of the SQL's non-keyword tokens that the evidence mentions."""
    if denominator not in ("sql", "evidence"):
        raise ValueError(f"unknown denominator {denominator!r}")
    sql_tokens = {
        t for t in _OVERLAP_TOKEN_RE.findall(sql.lower()) if t not in OVERLAP_STOPWORDS
    }
    evidence_tokens = set(_OVERLAP_TOKEN_RE.findall(evidence.lower()))
    hits = sql_tokens & evidence_tokens
    base = sql_tokens if denominator == "sql" else evidence_tokens
    if not base:
        return 0.0
    return len(hits) / len(base)


# --- execution accuracy ---


def _order_sensitive(gold_sql: str) -> bool:
    return _ORDER_BY_RE.search(_STRING_BODY_RE.sub("''", gold_sql)) is not None


def ex_match(handle: DatabaseHandle, pred_sql: str | None, gold_sql: str) -> bool:
    """True when pred and gold return the same rows. Errors count as a miss."""
    if not pred_sql:
        return False
    try:
        gold = handle.query(gold_sql)
        pred = handle.query(pred_sql)
    except DiverError:
        return False
    except Exception:
        log.exception("unexpected failure executing %r", pred_sql[:80])
        return False
    if _order_sensitive(gold_sql):
        return pred.rows == gold.rows
    return Counter(pred.rows) == Counter(gold.rows)


# --- efficiency ---


def _trimmed_mean(samples: list[float]) -> float:
    if len(samples) < 3:
        return sum(samples) / len(samples)
    keep = sorted(samples)[1:-1]
    return sum(keep) / len(keep)


def ves_reward(
    handle: DatabaseHandle,
    pred_sql: str | None,
    gold_sql: str,
    iterations: int = 10,
) -> float:
    """sqrt(gold_time / pred_time) when results match, else 0."""
    if iterations < 3:
        raise ValueError("iterations must be at least 3")
    if not ex_match(handle, pred_sql, gold_sql):
        return 0.0
    assert pred_sql is not None
    # warm-up run each so the first timed sample is not paying cache costs
    handle.query(gold_sql)
    handle.query(pred_sql)
    gold_times: list[float] = []
    pred_times: list[float] = []
    for _ in range(iterations):
        gold_times.append(handle.query(gold_sql).elapsed)
        pred_times.append(handle.query(pred_sql).elapsed)
    gold_mean = max(_trimmed_mean(gold_times), 1e-9)
    pred_mean = max(_trimmed_mean(pred_times), 1e-9)
    return math.sqrt(gold_mean / pred_mean)


def ves(
    handle: DatabaseHandle,
    pairs: list[tuple[str | None, str]],
    iterations: int = 10,
) -> float:
    """Mean timing-weighted reward over (pred, gold) pairs."""
    if iterations < 3:
        raise ValueError("iterations must be at least 3")
    if not pairs:
        return 0.0
    rewards = [ves_reward(handle, p, g, iterations=iterations) for p, g in pairs]
    return sum(rewards) / len(rewards)


# --- corpus evaluation ---

KNOWN_METRICS = ("ex", "ves", "f1", "overlap")


@dataclass
class MetricReport:
    count: int
    metrics: tuple[str, ...]
    ex: float | None = None
    ves: float | None = None
    schema: dict[str, float] | None = None
    value: dict[str, float] | None = None
    overlap: dict[str, float] | None = None
    per_difficulty: dict[str, dict] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        out: dict = {"count": self.count}
        if self.ex is not None:
            out["ex"] = self.ex
        if self.ves is not None:
            out["ves"] = self.ves
        if self.schema is not None:
            out["schema_f1"] = self.schema
        if self.value is not None:
            out["value_f1"] = self.value
        if self.overlap is not None:
            out["overlap"] = self.overlap
        if self.per_difficulty:
            out["per_difficulty"] = self.per_difficulty
        out["warnings"] = list(self.warnings)
        return out

    def to_text(self) -> str:
        lines = [f"{'questions':<14}{self.count}"]
        if self.ex is not None:
            lines.append(f"{'EX':<14}{self.ex:.3f}")
        if self.ves is not None:
            lines.append(f"{'VES':<14}{self.ves:.3f}")
        if self.schema is not None:
            lines.append(
                f"{'schema F1':<14}{self.schema['f1']:.3f}"
                f"  (P {self.schema['precision']:.3f}, R {self.schema['recall']:.3f})"
            )
        if self.value is not None:
            lines.append(
                f"{'value F1':<14}{self.value['f1']:.3f}"
                f"  (P {self.value['precision']:.3f}, R {self.value['recall']:.3f})"
            )
        if self.overlap is not None:
            lines.append(
                f"{'overlap':<14}mean {self.overlap['mean']:.3f}"
                f"  (min {self.overlap['min']:.3f}, max {self.overlap['max']:.3f})"
            )
        for name in sorted(self.per_difficulty):
            sub = self.per_difficulty[name]
            parts = [f"n={sub['count']}"]
            for key in ("ex", "ves"):
                if key in sub:
                    parts.append(f"{key.upper()} {sub[key]:.3f}")
            if "schema_f1" in sub:
                parts.append(f"schema F1 {sub['schema_f1']['f1']:.3f}")
            lines.append(f"{name:<14}{'  '.join(parts)}")
        for warning in self.warnings:
            lines.append(f"warning: {warning}")
        return "\n".join(lines) + "\n"


def _mean(values: list[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def _aggregate(records: list[dict], metrics: tuple[str, ...]) -> dict:
    out: dict = {"count": len(records)}
    if "ex" in metrics:
        out["ex"] = _mean([r["ex"] for r in records])
    if "ves" in metrics:
        out["ves"] = _mean([r["ves"] for r in records])
    if "f1" in metrics:
        for key, label in (("schema", "schema_f1"), ("value", "value_f1")):
            out[label] = {
                part: _mean([r[key][part] for r in records])
                for part in ("precision", "recall", "f1")
            }
    if "overlap" in metrics:
        scores = [r["overlap"] for r in records if r.get("overlap") is not None]
        if scores:
            out["overlap"] = {
                "mean": _mean(scores),
                "min": min(scores),
                "max": max(scores),
                "count": len(scores),
            }
    return out


def evaluate(
    samples: list[EvalSample],
    metrics: tuple[str, ...] = KNOWN_METRICS,
    iterations: int = 10,
) -> MetricReport:
    for name in metrics:
        if name not in KNOWN_METRICS:
            raise ValueError(f"unknown metric {name!r}")
    needs_execution = "ex" in metrics or "ves" in metrics

    handles: dict[Path, DatabaseHandle] = {}
    catalogs: dict[Path, SchemaCatalog] = {}
    warnings: list[str] = []
    records: list[dict] = []
    try:
        for sample in samples:
            path = Path(sample.db_path)
            try:
                if path not in handles:
                    handles[path] = open_database(path)
                handle = handles[path]
            except DiverError as exc:
                warnings.append(f"{sample.question_id}: cannot open database ({exc})")
                continue
            if needs_execution:
                try:
                    handle.query(sample.gold_sql)
                except DiverError as exc:
                    warnings.append(
                        f"{sample.question_id}: reference query failed ({exc}); skipped"
                    )
                    continue
            if sample.pred_sql is None:
                warnings.append(f"{sample.question_id}: missing prediction")

            record: dict = {"difficulty": sample.difficulty}
            if "ex" in metrics:
                record["ex"] = float(ex_match(handle, sample.pred_sql, sample.gold_sql))
            if "ves" in metrics:
                record["ves"] = ves_reward(
                    handle, sample.pred_sql, sample.gold_sql, iterations=iterations
                )
            if "f1" in metrics:
                if path not in catalogs:
                    catalogs[path] = build_catalog(handle, None)
                cat = catalogs[path]
                gold_sets = extract_entities(sample.gold_sql, cat)
                pred_sets = extract_entities(sample.pred_sql or "", cat)
                record.update(linking_f1(gold_sets, pred_sets))
            if "overlap" in metrics:
                record["overlap"] = (
                    token_overlap(sample.evidence_text, sample.gold_sql)
                    if sample.evidence_text is not None
                    else None
                )
            records.append(record)
    finally:
        for handle in handles.values():
            handle.close()

    top = _aggregate(records, metrics)
    by_difficulty: dict[str, dict] = {}
    for name in sorted({r["difficulty"] for r in records if r["difficulty"]}):
        subset = [r for r in records if r["difficulty"] == name]
        by_difficulty[name] = _aggregate(subset, metrics)

    return MetricReport(
        count=top["count"],
        metrics=tuple(metrics),
        ex=top.get("ex"),
        ves=top.get("ves"),
        schema=top.get("schema_f1"),
        value=top.get("value_f1"),
        overlap=top.get("overlap"),
        per_difficulty=by_difficulty,
        warnings=warnings,
    )
