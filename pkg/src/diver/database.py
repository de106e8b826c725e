"""Read-only SQLite adapter.

Opens database files in read-only mode, walks their schema into a catalog
(optionally joined with BIRD-style description CSVs), and runs parameter-bound
probe queries under a per-statement timeout. Nothing here can write: the
connection is opened with mode=ro and query() additionally rejects any
statement that is not SELECT/WITH/VALUES.
"""

from __future__ import annotations

import csv
import logging
import re
import sqlite3
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .errors import (
    DescriptionParseError,
    NotFound,
    NotReadable,
    ReadOnlyViolation,
    SqlError,
)

logger = logging.getLogger(__name__)

READ_KEYWORDS = {"select", "with", "values"}

DESCRIPTION_ENCODINGS = ("utf-8-sig", "cp1252", "latin-1")


@dataclass
class ResultSet:
    columns: list[str]
    rows: list[tuple]
    elapsed: float  # seconds of wall clock spent executing + fetching


@dataclass
class ColumnInfo:
    name: str
    declared_type: str
    description: str | None = None


@dataclass
class TableInfo:
    name: str
    columns: list[ColumnInfo]
    row_count: int

    def column(self, name: str) -> ColumnInfo | None:
        if not isinstance(name, str):
            return None
        low = name.lower()
        for c in self.columns:
            if c.name.lower() == low:
                return c
        return None


@dataclass
class SchemaCatalog:
    tables: list[TableInfo] = field(default_factory=list)

    def table(self, name: str) -> TableInfo | None:
        if not isinstance(name, str):
            return None
        low = name.lower()
        for t in self.tables:
            if t.name.lower() == low:
                return t
        return None


class DatabaseHandle:
    """One read-only connection to one SQLite file."""

    def __init__(self, path: Path, statement_timeout: float = 30.0):
        self.path = Path(path)
        self.statement_timeout = statement_timeout
        self._deadline: float | None = None
        uri = self.path.resolve().as_uri() + "?mode=ro"
        try:
            self._conn = sqlite3.connect(uri, uri=True, check_same_thread=False)
        except sqlite3.Error as exc:
            raise NotReadable(f"cannot open {self.path}: {exc}") from exc
        self._conn.set_progress_handler(self._tick, 2000)
        try:
            self._conn.execute("SELECT 1 FROM sqlite_master LIMIT 1").fetchall()
        except sqlite3.DatabaseError as exc:
            self._conn.close()
            raise NotReadable(f"cannot read {self.path}: {exc}") from exc

    def _tick(self) -> int:
        # nonzero return interrupts the running statement
        if self._deadline is not None and time.perf_counter() > self._deadline:
            return 1
        return 0

    def _execute(self, sql: str, params: Sequence[Any] = ()) -> sqlite3.Cursor:
        """Internal execution path for catalog PRAGMAs; no keyword filtering."""
        self._deadline = time.perf_counter() + self.statement_timeout
        try:
            return self._conn.execute(sql, tuple(params))
        except sqlite3.Error as exc:
            raise SqlError(str(exc)) from exc
        finally:
            self._deadline = None

    def query(self, sql: str, params: Sequence[Any] = ()) -> ResultSet:
        keyword = _first_keyword(sql)
        if keyword not in READ_KEYWORDS:
            raise ReadOnlyViolation(
                f"only read statements are allowed, got {keyword or 'empty statement'!r}"
            )
        started = time.perf_counter()
        self._deadline = started + self.statement_timeout
        try:
            cursor = self._conn.execute(sql, tuple(params))
            rows = cursor.fetchall()
        except sqlite3.Error as exc:
            # the engine's own message travels verbatim into corrective feedback
            raise SqlError(str(exc)) from exc
        finally:
            self._deadline = None
        elapsed = time.perf_counter() - started
        columns = [d[0] for d in cursor.description] if cursor.description else []
        return ResultSet(columns=columns, rows=rows, elapsed=elapsed)

    def close(self) -> None:
        self._conn.close()


_COMMENT_RE = re.compile(r"^(?:\s+|--[^\n]*\n?|/\*.*?\*/)*", re.DOTALL)


def _first_keyword(sql: str) -> str:
    rest = _COMMENT_RE.sub("", sql or "")
    m = re.match(r"[A-Za-z_]+", rest)
    return m.group(0).lower() if m else ""


def open_database(path: str | Path, statement_timeout: float = 30.0) -> DatabaseHandle:
    p = Path(path)
    if not p.exists():
        raise NotFound(f"database file does not exist: {p}")
    return DatabaseHandle(p, statement_timeout=statement_timeout)


def query(handle: DatabaseHandle, sql: str, params: Sequence[Any] = ()) -> ResultSet:
    return handle.query(sql, params)


def quote_identifier(name: str) -> str:
    # backticks, not double quotes: SQLite silently reads an unknown
    # double-quoted identifier as a string literal, which would swallow the
    # engine's "no such column" error the probing loop depends on
    return "`" + name.replace("`", "``") + "`"


def parse_description_file(path: Path) -> dict[str, str]:
    """Read one BIRD-style description CSV into {column name -> description}.

    Joins column_description and value_description with ' | '. Raises
    DescriptionParseError when the file cannot be decoded or lacks the
    original_column_name header.
    """
    last_error: Exception | None = None
    for encoding in DESCRIPTION_ENCODINGS:
        try:
            with open(path, "r", encoding=encoding, newline="") as fh:
                reader = csv.DictReader(fh)
                if not reader.fieldnames or "original_column_name" not in reader.fieldnames:
                    raise DescriptionParseError(
                        f"{path}: missing original_column_name header"
                    )
                out: dict[str, str] = {}
                for row in reader:
                    name = (row.get("original_column_name") or "").strip()
                    if not name:
                        continue
                    parts = [
                        (row.get("column_description") or "").strip(),
                        (row.get("value_description") or "").strip(),
                    ]
                    text = " | ".join(p for p in parts if p)
                    if text:
                        out[name.lower()] = text
                return out
        except DescriptionParseError:
            raise
        except (UnicodeDecodeError, csv.Error, OSError) as exc:
            last_error = exc
            continue
    raise DescriptionParseError(f"{path}: cannot parse ({last_error})")


def catalog(handle: DatabaseHandle, description_dir: str | Path | None = None) -> SchemaCatalog:
    """Walk sqlite_master + PRAGMA table_info into a SchemaCatalog; join
    description CSVs when a directory is given. Malformed CSVs only warn."""
    descriptions: dict[str, dict[str, str]] = {}
    if description_dir is not None:
        d = Path(description_dir)
        if d.is_dir():
            for f in sorted(d.iterdir()):
                if f.suffix.lower() != ".csv":
                    continue
                try:
                    descriptions[f.stem.lower()] = parse_description_file(f)
                except DescriptionParseError as exc:
                    logger.warning("skipping description file: %s", exc)
        else:
            logger.warning("description directory missing: %s", d)

    tables = []
    cur = handle._execute(
        "SELECT name FROM sqlite_master WHERE type = 'table'"
        " AND name NOT LIKE 'sqlite_%' ORDER BY name"
    )
    for (table_name,) in cur.fetchall():
        table_desc = descriptions.get(table_name.lower(), {})
        columns = []
        for row in handle._execute(f"PRAGMA table_info({quote_identifier(table_name)})"):
            col_name, declared = row[1], row[2]
            columns.append(
                ColumnInfo(
                    name=col_name,
                    declared_type=declared or "",
                    description=table_desc.get(col_name.lower()),
                )
            )
        count = handle._execute(
            f"SELECT COUNT(*) FROM {quote_identifier(table_name)}"
        ).fetchone()[0]
        tables.append(TableInfo(name=table_name, columns=columns, row_count=count))
    return SchemaCatalog(tables=tables)


def db_path_for(db_root: str | Path, db_id: str) -> Path:
    return Path(db_root) / db_id / f"{db_id}.sqlite"


def description_dir_for(db_root: str | Path, db_id: str) -> Path:
    return Path(db_root) / db_id / "database_description"
