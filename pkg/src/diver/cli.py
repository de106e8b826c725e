"""Command-line surface: pipeline runs, evaluation, trace statistics.

Every human-readable output has a JSON twin: run writes run_report.json,
eval writes the report with --out, trace-stats prints JSON with --json.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .cotf import TOOL_NAMES, FEEDBACK_KINDS, Question, deserialize, serialize
from .database import db_path_for, description_dir_for
from .embedding import LexicalEmbedder, RemoteEmbedder
from .errors import ConfigurationError, DiverError
from .eval import KNOWN_METRICS, EvalSample, evaluate
from .llm import LiveClient, ScriptedSession
from .pipeline import DEFAULT_CANDIDATES, DEFAULT_MAX_TURNS, PipelineConfig, run_question

log = logging.getLogger(__name__)


def _dump_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _load_json(path: str | Path, what: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot load {what} from {path}: {exc}") from exc


def _build_llm(args):
    if args.mock_llm:
        session = ScriptedSession.from_file(args.mock_llm)
        return session, session.is_sequential
    if not args.llm_endpoint:
        raise ConfigurationError("need --mock-llm SCRIPT or --llm-endpoint URL")
    return LiveClient(base_url=args.llm_endpoint, model=args.llm_model), False


def _build_embedder(args):
    if args.embedder == "lexical":
        return LexicalEmbedder()
    if not args.embedder_endpoint:
        raise ConfigurationError("--embedder remote needs --embedder-endpoint URL")
    return RemoteEmbedder(endpoint=args.embedder_endpoint)


# --- run ---


def _already_done(trace_dir: Path, evidence_dir: Path, qid: str, styles) -> bool:
    trace = trace_dir / f"{qid}.json"
    sidecar = evidence_dir / f"{qid}.json"
    if not (trace.exists() and sidecar.exists()):
        return False
    try:
        texts = json.loads(sidecar.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return False
    return isinstance(texts, dict) and all(s in texts for s in styles)


def _run_one(row: dict, qid: str, args, llm, embedder, config, trace_dir, evidence_dir):
    text = row.get("question")
    if not isinstance(text, str) or not text:
        raise ConfigurationError("question text missing")
    db_id = row.get("db_id")
    if not isinstance(db_id, str) or not db_id:
        raise ConfigurationError("db_id missing")
    db_path = db_path_for(args.db_root, db_id)
    desc = description_dir_for(args.db_root, db_id)
    question = Question(
        question_id=qid,
        db_id=db_id,
        text=text,
        gold_sql=row.get("SQL"),
        expert_evidence=row.get("evidence"),
        difficulty=row.get("difficulty"),
    )
    doc, evidences = run_question(
        question,
        db_path,
        desc if desc.is_dir() else None,
        llm,
        embedder,
        config,
    )
    (trace_dir / f"{qid}.json").write_bytes(serialize(doc))
    sidecar_path = evidence_dir / f"{qid}.json"
    texts: dict = {}
    if sidecar_path.exists():
        try:
            prior = json.loads(sidecar_path.read_text(encoding="utf-8"))
            if isinstance(prior, dict):
                texts.update(prior)
        except (OSError, json.JSONDecodeError):
            pass
    texts.update({style: ev.text for style, ev in evidences.items()})
    sidecar_path.write_text(_dump_json(texts), encoding="utf-8")


def cmd_run(args) -> int:
    try:
        rows = _load_json(args.dataset, "dataset")
        if not isinstance(rows, list):
            raise ConfigurationError(f"dataset {args.dataset} must be a JSON list")
        llm, sequential = _build_llm(args)
        embedder = _build_embedder(args)
    except DiverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    jobs = max(1, args.jobs)
    if sequential and jobs != 1:
        log.warning("sequence replay scripts run single-threaded; ignoring --jobs %d", jobs)
        jobs = 1

    out_dir = Path(args.out)
    trace_dir = out_dir / "traces"
    evidence_dir = out_dir / "evidence"
    trace_dir.mkdir(parents=True, exist_ok=True)
    evidence_dir.mkdir(parents=True, exist_ok=True)

    config = PipelineConfig(
        style=args.style,
        max_turns=args.max_turns,
        candidates=args.candidates,
        seed=args.seed,
    )
    styles = config.styles()

    ordered = [(str(row.get("question_id", i)), row) for i, row in enumerate(rows)]
    completed: list[str] = []
    skipped: list[str] = []
    failed: dict[str, str] = {}

    pending = []
    for qid, row in ordered:
        if not args.force and _already_done(trace_dir, evidence_dir, qid, styles):
            skipped.append(qid)
        else:
            pending.append((qid, row))

    def work(item) -> tuple[str, str | None]:
        qid, row = item
        try:
            _run_one(row, qid, args, llm, embedder, config, trace_dir, evidence_dir)
            return qid, None
        except DiverError as exc:
            return qid, str(exc)
        except Exception as exc:  # one bad question must not sink the batch
            log.exception("question %s failed unexpectedly", qid)
            return qid, f"unexpected: {exc!r}"

    if jobs == 1:
        results = [work(item) for item in pending]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, pending))
    for qid, error in results:
        if error is None:
            completed.append(qid)
        else:
            failed[qid] = error

    for style in styles:
        mapping: dict[str, str] = {}
        for qid, _ in ordered:
            sidecar = evidence_dir / f"{qid}.json"
            if not sidecar.exists():
                continue
            try:
                texts = json.loads(sidecar.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError):
                continue
            if isinstance(texts, dict) and style in texts:
                mapping[qid] = texts[style]
        (out_dir / f"evidence_{style}.json").write_text(
            _dump_json(mapping), encoding="utf-8"
        )

    report = {
        "completed": completed,
        "skipped": skipped,
        "failed": failed,
        "styles": list(styles),
    }
    (out_dir / "run_report.json").write_text(_dump_json(report), encoding="utf-8")

    for qid, _ in ordered:
        if qid in failed:
            print(f"{qid}\tfailed\t{failed[qid]}")
        elif qid in skipped:
            print(f"{qid}\tskipped")
        else:
            print(f"{qid}\tok")
    print(f"completed {len(completed)}  skipped {len(skipped)}  failed {len(failed)}")
    return 1 if failed else 0


# --- eval ---


def cmd_eval(args) -> int:
    metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    bad = [m for m in metrics if m not in KNOWN_METRICS]
    if bad or not metrics:
        print(
            f"error: unknown metrics {bad}; choose from {', '.join(KNOWN_METRICS)}",
            file=sys.stderr,
        )
        return 2
    try:
        rows = _load_json(args.dataset, "dataset")
        predictions = _load_json(args.predictions, "predictions")
        if not isinstance(rows, list) or not isinstance(predictions, dict):
            raise ConfigurationError("dataset must be a list and predictions a map")
    except DiverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    samples = []
    for i, row in enumerate(rows):
        qid = str(row.get("question_id", i))
        gold = row.get("SQL")
        db_id = row.get("db_id")
        if not gold or not db_id:
            log.warning("question %s lacks SQL or db_id; skipped", qid)
            continue
        pred = predictions.get(qid)
        samples.append(
            EvalSample(
                question_id=qid,
                db_path=db_path_for(args.db_root, db_id),
                gold_sql=gold,
                pred_sql=pred if isinstance(pred, str) else None,
                difficulty=row.get("difficulty"),
                evidence_text=row.get("evidence"),
            )
        )
    report = evaluate(samples, metrics=metrics, iterations=args.iterations)
    if args.json:
        print(_dump_json(report.to_dict()), end="")
    else:
        print(report.to_text(), end="")
    if args.out:
        Path(args.out).write_text(_dump_json(report.to_dict()), encoding="utf-8")
    return 0


# --- trace-stats ---


def cmd_trace_stats(args) -> int:
    trace_dir = Path(args.trace_dir)
    if not trace_dir.is_dir():
        print(f"error: {trace_dir} is not a directory", file=sys.stderr)
        return 2
    tool_counts = {name: 0 for name in TOOL_NAMES}
    feedback_counts = {kind: 0 for kind in FEEDBACK_KINDS}
    traces = clauses = turns = 0
    skipped: list[str] = []
    for path in sorted(trace_dir.glob("*.json")):
        try:
            doc = deserialize(path.read_bytes())
        except (DiverError, OSError) as exc:
            log.warning("skipping corrupt trace %s: %s", path.name, exc)
            skipped.append(path.name)
            continue
        traces += 1
        clauses += len(doc.clauses)
        for column in doc.turns:
            turns += len(column)
            for turn in column:
                tool = turn.tool_call.tool
                tool_counts[tool] = tool_counts.get(tool, 0) + 1
                feedback_counts[turn.feedback.kind] += 1
    stats = {
        "traces": traces,
        "clauses": clauses,
        "turns": turns,
        "mean_turns_per_clause": turns / clauses if clauses else 0.0,
        "tool_counts": tool_counts,
        "feedback_counts": feedback_counts,
        "skipped": skipped,
    }
    if args.json:
        print(_dump_json(stats), end="")
    else:
        print(f"{'traces':<22}{traces}")
        print(f"{'clauses':<22}{clauses}")
        print(f"{'turns':<22}{turns}")
        print(f"{'mean turns/clause':<22}{stats['mean_turns_per_clause']:.3f}")
        for kind in FEEDBACK_KINDS:
            print(f"{'feedback ' + kind:<22}{feedback_counts[kind]}")
        for name in sorted(tool_counts):
            print(f"{'tool ' + name:<22}{tool_counts[name]}")
        if skipped:
            print(f"{'skipped':<22}{', '.join(skipped)}")
    return 0


# --- entry point ---


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diver",
        description="Generate and evaluate database evidence for natural-language questions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the evidence pipeline over a dataset")
    run.add_argument("--dataset", required=True, help="dev-set JSON file")
    run.add_argument("--db-root", required=True, help="directory of <db_id>/<db_id>.sqlite")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--style", choices=["long", "concise", "both"], default="concise")
    run.add_argument("--max-turns", type=int, default=DEFAULT_MAX_TURNS)
    run.add_argument("--candidates", type=int, default=DEFAULT_CANDIDATES)
    run.add_argument("--mock-llm", help="replay script JSON instead of a live model")
    run.add_argument("--llm-endpoint", help="chat-completions base URL")
    run.add_argument("--llm-model", default="gpt-4o")
    run.add_argument("--embedder", choices=["remote", "lexical"], default="lexical")
    run.add_argument("--embedder-endpoint")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("--force", action="store_true", help="redo finished questions")

    ev = sub.add_parser("eval", help="score predictions against gold SQL")
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--predictions", required=True, help="JSON map question_id -> SQL")
    ev.add_argument("--db-root", required=True)
    ev.add_argument("--metrics", default="ex,ves,f1")
    ev.add_argument("--iterations", type=int, default=10)
    ev.add_argument("--out", help="write the JSON report here")
    ev.add_argument("--json", action="store_true", help="print JSON instead of text")

    stats = sub.add_parser("trace-stats", help="summarize saved traces")
    stats.add_argument("--trace-dir", required=True)
    stats.add_argument("--json", action="store_true")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "eval":
        return cmd_eval(args)
    return cmd_trace_stats(args)


if __name__ == "__main__":
    sys.exit(main())
