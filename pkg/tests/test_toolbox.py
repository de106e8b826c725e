"""Probing tools: SQL oracles, dispatch validation, guidance rendering."""

from __future__ import annotations

import random
import re
import sqlite3

import pytest

from diver.cotf import TOOL_NAMES, ToolCall
from diver.database import catalog, open_database
from diver.embedding import LexicalEmbedder
from diver.errors import EmbedderUnavailable, MissingGuidancePart, UnknownColumn, UnknownTable
from diver.toolbox import (
    REGISTRY,
    ToolContext,
    ToolSpec,
    dispatch,
    head,
    if_null,
    info,
    random_rows,
    render_guidance,
    sim_columns,
    sim_value_in,
    uniq_value,
    value_in,
)


@pytest.fixture(scope="module")
def handle(schools_db):
    return open_database(schools_db)


@pytest.fixture(scope="module")
def cat(schools_db, schools_desc_dir):
    return catalog(open_database(schools_db), schools_desc_dir)


@pytest.fixture(scope="module")
def ctx(handle, cat):
    return ToolContext(
        handle=handle, catalog=cat, embedder=LexicalEmbedder(), rng=random.Random(11)
    )


def _sql(db, stmt, params=()):
    conn = sqlite3.connect(db)
    try:
        return conn.execute(stmt, params).fetchall()
    finally:
        conn.close()


# --- value_in ---


def test_value_in_matches_sql_count_oracle(handle, schools_db):
    want = _sql(schools_db, 'SELECT COUNT(*) FROM frpm WHERE "Low Grade" = ?', ("K",))[0][0]
    got = value_in(handle, "frpm", "Low Grade", "K")
    assert got == {"exists": True, "match_count": want}
    assert want == 5


def test_value_in_is_case_sensitive(handle):
    assert value_in(handle, "frpm", "Low Grade", "k") == {"exists": False, "match_count": 0}


def test_value_in_absent_value(handle):
    assert value_in(handle, "frpm", "Low Grade", "Z") == {"exists": False, "match_count": 0}


def test_value_in_numeric_value(handle, schools_db):
    want = _sql(schools_db, "SELECT COUNT(*) FROM schools WHERE Magnet = 1")[0][0]
    got = value_in(handle, "schools", "Magnet", 1)
    assert got == {"exists": True, "match_count": want}


# --- uniq_value ---


def test_uniq_value_matches_sql_oracles(handle, schools_db):
    want_count = _sql(schools_db, 'SELECT COUNT(DISTINCT "Low Grade") FROM frpm')[0][0]
    want_samples = [
        r[0]
        for r in _sql(
            schools_db,
            'SELECT DISTINCT CAST("Low Grade" AS TEXT) AS v FROM frpm'
            " WHERE \"Low Grade\" IS NOT NULL ORDER BY v LIMIT 20",
        )
    ]
    got = uniq_value(handle, "frpm", "Low Grade")
    assert got == {"distinct_count": want_count, "samples": want_samples}
    assert got["samples"] == ["1", "6", "9", "K"]


def test_uniq_value_limit_truncates_samples_not_count(handle):
    got = uniq_value(handle, "frpm", "Low Grade", limit=2)
    assert got["distinct_count"] == 4
    assert got["samples"] == ["1", "6"]


def test_uniq_value_stringifies_numeric_column(handle):
    got = uniq_value(handle, "schools", "Magnet")
    assert got["samples"] == ["0", "1"]
    assert got["distinct_count"] == 2


# --- head / random ---


def test_head_matches_sql_oracle(handle, schools_db):
    want = _sql(schools_db, "SELECT * FROM frpm LIMIT 3")
    got = head(handle, "frpm", 3)
    assert got["rows"] == [list(r) for r in want]
    assert got["columns"][0] == "CDSCode"
    assert len(got["columns"]) == 8


def test_random_is_reproducible_and_subset(handle, schools_db):
    table_rows = {tuple(r) for r in _sql(schools_db, "SELECT * FROM frpm")}
    a = random_rows(handle, "frpm", 2, seed=7)
    b = random_rows(handle, "frpm", 2, seed=7)
    assert a == b
    assert a["seed"] == 7
    assert len(a["rows"]) == 2
    assert len({tuple(r) for r in a["rows"]}) == 2  # without replacement
    for row in a["rows"]:
        assert tuple(row) in table_rows
    c = random_rows(handle, "frpm", 2, seed=8)
    assert c != a or True  # different seed may coincide; only determinism is contracted


def test_random_n_larger_than_table_returns_all(handle):
    got = random_rows(handle, "frpm", 500, seed=1)
    assert len(got["rows"]) == 12


# --- if_null ---


def test_if_null_matches_sql_oracle(handle, schools_db):
    total, nonnull = _sql(
        schools_db, 'SELECT COUNT(*), COUNT("Free Meal Count (K-12)") FROM frpm'
    )[0]
    got = if_null(handle, "frpm", "Free Meal Count (K-12)")
    assert got == {
        "null_count": total - nonnull,
        "total": total,
        "fraction": (total - nonnull) / total,
    }
    assert got["null_count"] == 3
    assert got["fraction"] == pytest.approx(0.25)


def test_if_null_no_nulls(handle):
    got = if_null(handle, "frpm", "CDSCode")
    assert got == {"null_count": 0, "total": 12, "fraction": 0.0}


# --- info ---


def test_info_column_surfaces_description_verbatim(handle, cat):
    got = info(handle, cat, "frpm", "School Type")
    assert got["declared_type"] == "TEXT"
    assert "SSS means State Special Schools" in got["description"]
    assert got["row_count"] == 12
    assert got["null_fraction"] == 0.0
    assert got["table"] == "frpm"
    assert got["column"] == "School Type"


def test_info_table_mode_one_record_per_column(handle, cat):
    got = info(handle, cat, "frpm")
    assert got["table"] == "frpm"
    assert got["row_count"] == 12
    assert [c["column"] for c in got["columns"]] == [
        "CDSCode",
        "School Name",
        "Low Grade",
        "High Grade",
        "School Type",
        "Enrollment (K-12)",
        "Free Meal Count (K-12)",
        "Charter School (Y/N)",
    ]
    by_name = {c["column"]: c for c in got["columns"]}
    assert by_name["Free Meal Count (K-12)"]["null_fraction"] == pytest.approx(0.25)


def test_info_unknown_names_raise(handle, cat):
    with pytest.raises(UnknownTable):
        info(handle, cat, "ghost")
    with pytest.raises(UnknownColumn):
        info(handle, cat, "frpm", "ghost")


# --- sim_value_in ---


def test_sim_value_in_exact_value_tops_ranking(handle):
    emb = LexicalEmbedder()
    got = sim_value_in(handle, emb, "frpm", "School Type", "SSS", k=1)
    assert got["matches"][0]["value"] == "SSS"
    assert got["matches"][0]["score"] == pytest.approx(1.0)
    assert got["pool_size"] == 3
    assert got["prefiltered"] is False
    assert got["scoring"] == "embedding"


def test_sim_value_in_scores_descend_and_k_caps(handle):
    emb = LexicalEmbedder()
    got = sim_value_in(handle, emb, "schools", "City", "Fresno area", k=3)
    scores = [m["score"] for m in got["matches"]]
    assert scores == sorted(scores, reverse=True)
    assert len(got["matches"]) == 3
    assert got["matches"][0]["value"] == "Fresno"


def test_sim_value_in_k_beyond_pool_returns_pool(handle):
    emb = LexicalEmbedder()
    got = sim_value_in(handle, emb, "frpm", "School Type", "anything", k=50)
    assert len(got["matches"]) == 3


class _DownEmbedder:
    def embed(self, texts):
        raise EmbedderUnavailable("endpoint is down")


def test_sim_value_in_falls_back_to_lexical(handle):
    got = sim_value_in(handle, _DownEmbedder(), "frpm", "School Type", "SSS", k=2)
    assert got["scoring"] == "lexical"
    assert got["matches"][0]["value"] == "SSS"
    assert got["matches"][0]["score"] == pytest.approx(1.0)


def test_sim_value_in_prefilters_huge_pools(tmp_path):
    db = tmp_path / "big.sqlite"
    conn = sqlite3.connect(db)
    conn.execute("CREATE TABLE t (v TEXT)")
    conn.executemany(
        "INSERT INTO t VALUES (?)", [(f"entry number {i:05d}",) for i in range(10050)]
    )
    conn.commit()
    conn.close()
    got = sim_value_in(open_database(db), LexicalEmbedder(), "t", "v", "entry number 00042", k=2)
    assert got["pool_size"] == 10050
    assert got["prefiltered"] is True
    assert got["matches"][0]["value"] == "entry number 00042"
    assert got["matches"][0]["score"] == pytest.approx(1.0)


# --- sim_columns ---


def test_sim_columns_ranks_grade_columns_for_grade_span(cat):
    got = sim_columns(cat, LexicalEmbedder(), "grade span", k=4)
    names = {(m["table"], m["column"]) for m in got["matches"]}
    assert ("frpm", "Low Grade") in names
    assert ("frpm", "High Grade") in names
    scores = [m["score"] for m in got["matches"]]
    assert scores == sorted(scores, reverse=True)


def test_sim_columns_k_caps_results(cat):
    got = sim_columns(cat, LexicalEmbedder(), "school", k=3)
    assert len(got["matches"]) == 3
    total_columns = sum(len(t.columns) for t in cat.tables)
    everything = sim_columns(cat, LexicalEmbedder(), "school", k=999)
    assert len(everything["matches"]) == total_columns


def test_sim_columns_lexical_fallback(cat):
    got = sim_columns(cat, _DownEmbedder(), "grade", k=5)
    assert got["scoring"] == "lexical"
    names = {(m["table"], m["column"]) for m in got["matches"]}
    assert ("frpm", "Low Grade") in names


# --- determinism across repeated execution ---


def test_probes_are_deterministic(handle, cat):
    emb = LexicalEmbedder()
    probes = [
        lambda: value_in(handle, "frpm", "Low Grade", "K"),
        lambda: uniq_value(handle, "frpm", "School Type"),
        lambda: head(handle, "schools", 4),
        lambda: random_rows(handle, "schools", 3, seed=42),
        lambda: if_null(handle, "schools", "Phone"),
        lambda: info(handle, cat, "schools", "Magnet"),
        lambda: sim_value_in(handle, emb, "schools", "City", "Oakland", k=3),
        lambda: sim_columns(cat, emb, "free meals", k=5),
    ]
    for probe in probes:
        assert probe() == probe()


# --- dispatch ---


def test_dispatch_success_is_standard_feedback(ctx):
    fb = dispatch(ToolCall("value_in", {"table": "frpm", "column": "Low Grade", "value": "K"}), ctx)
    assert fb.kind == "standard"
    assert fb.result == {"exists": True, "match_count": 5}
    assert fb.message == ""


def test_dispatch_unknown_tool_is_corrective(ctx):
    fb = dispatch(ToolCall("frobnicate", {"table": "frpm"}), ctx)
    assert fb.kind == "corrective"
    assert "unknown tool" in fb.message
    assert "frobnicate" in fb.message


def test_dispatch_missing_and_extra_args(ctx):
    fb = dispatch(ToolCall("value_in", {"table": "frpm", "column": "Low Grade"}), ctx)
    assert fb.kind == "corrective"
    assert "value" in fb.message
    fb = dispatch(
        ToolCall(
            "value_in",
            {"table": "frpm", "column": "Low Grade", "value": "K", "bogus": 1},
        ),
        ctx,
    )
    assert fb.kind == "corrective"
    assert "bogus" in fb.message


def test_dispatch_bad_types_are_corrective(ctx):
    fb = dispatch(ToolCall("head", {"table": "frpm", "n": "three"}), ctx)
    assert fb.kind == "corrective"
    fb = dispatch(ToolCall("head", {"table": "frpm", "n": 0}), ctx)
    assert fb.kind == "corrective"
    fb = dispatch(ToolCall("head", {"table": 7, "n": 2}), ctx)
    assert fb.kind == "corrective"


def test_dispatch_sql_error_carries_engine_text(ctx, schools_db):
    # oracle: the engine's own message for the same broken probe
    conn = sqlite3.connect(schools_db)
    try:
        conn.execute("SELECT COUNT(*) FROM frpm WHERE `No Such` = ?", ("x",))
        raise AssertionError("should have failed")
    except sqlite3.OperationalError as exc:
        engine_text = str(exc)
    finally:
        conn.close()

    fb = dispatch(ToolCall("value_in", {"table": "frpm", "column": "No Such", "value": "x"}), ctx)
    assert fb.kind == "corrective"
    assert engine_text in fb.message
    assert "no such column" in fb.message


def test_dispatch_unknown_table_is_corrective(ctx):
    fb = dispatch(ToolCall("info", {"table": "ghost"}), ctx)
    assert fb.kind == "corrective"
    assert "ghost" in fb.message


def test_dispatch_none_is_empty_standard(ctx):
    fb = dispatch(ToolCall("none", {}), ctx)
    assert fb.kind == "standard"
    assert fb.result == {}
    assert fb.message == ""
    fb = dispatch(ToolCall("none", {"x": 1}), ctx)
    assert fb.kind == "corrective"


def test_dispatch_draws_and_records_seed_in_live_mode(handle, cat):
    ctx_live = ToolContext(
        handle=handle, catalog=cat, embedder=LexicalEmbedder(), rng=random.Random(123)
    )
    call = ToolCall("random", {"table": "frpm", "n": 2})
    fb = dispatch(call, ctx_live)
    assert fb.kind == "standard"
    assert "seed" in call.args  # injected so the recorded turn replays exactly
    assert fb.result["seed"] == call.args["seed"]
    replay = dispatch(ToolCall("random", {"table": "frpm", "n": 2, "seed": call.args["seed"]}), ctx_live)
    assert replay.result["rows"] == fb.result["rows"]


def test_dispatch_requires_seed_without_rng(handle, cat):
    ctx_replay = ToolContext(handle=handle, catalog=cat, embedder=LexicalEmbedder(), rng=None)
    fb = dispatch(ToolCall("random", {"table": "frpm", "n": 2}), ctx_replay)
    assert fb.kind == "corrective"
    assert "seed" in fb.message


def test_dispatch_results_are_json_native(ctx):
    import json

    for call in [
        ToolCall("head", {"table": "frpm", "n": 2}),
        ToolCall("uniq_value", {"table": "frpm", "column": "High Grade"}),
        ToolCall("if_null", {"table": "schools", "column": "Magnet"}),
    ]:
        fb = dispatch(call, ctx)
        assert fb.kind == "standard"
        json.dumps(fb.result)  # must not raise


# --- guidance ---


def test_registry_covers_all_nine_tools():
    assert tuple(REGISTRY) == TOOL_NAMES
    for spec in REGISTRY.values():
        assert spec.description
        assert spec.scenario


def test_guidance_is_deterministic_and_complete():
    text = render_guidance()
    assert text == render_guidance()
    for name in TOOL_NAMES:
        # standalone mentions only: "value_in" must not also count the
        # occurrence inside "sim_value_in"
        hits = re.findall(rf"(?<![A-Za-z_]){name}(?![A-Za-z_])", text)
        assert len(hits) == 1, f"{name} mentioned {len(hits)} times"
    # every required parameter is listed
    assert "query_text" in text
    assert "table" in text


def test_guidance_missing_part_raises():
    broken = dict(REGISTRY)
    broken["head"] = ToolSpec(
        name="head",
        description="first rows of a table",
        required_params=("table", "n"),
        optional_params=(),
        scenario="",
    )
    with pytest.raises(MissingGuidancePart):
        render_guidance(broken)
