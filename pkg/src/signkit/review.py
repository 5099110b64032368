"""HTTP review service for candidate-pair adjudication.

Serves pending candidate pairs (with template media URIs) to registered
experts and records their verdicts in an append-only line-delimited log.
A task closes once the quorum of verdicts is reached; every acknowledged
vote is flushed to the log before the response goes out, so replaying the
log after a restart reconstructs identical state.

Endpoints (all responses are single-line text records):

    GET  /tasks/next?expert=ID   -> task ... | none remaining=0
    POST /votes                  -> ack ...  (body: one vote record line)
    GET  /progress               -> progress ...

The vote log is the same file format consumed by
:func:`signkit.grouping.aggregate_votes`.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .grouping import DEFAULT_QUORUM, CandidatePair, VoteRecord, canonical_pair
from .records import RecordError, check_fields, format_record, parse_record, read_records


class ReviewError(ValueError):
    pass


@dataclass
class ReviewTask:
    pair: CandidatePair
    media_a: str
    media_b: str
    votes_recorded: int = 0

    def status(self, quorum: int) -> str:
        return "closed" if self.votes_recorded >= quorum else "open"


_TASK_FIELDS = ["pair_a", "pair_b", "rank", "source", "media_a", "media_b"]
_VOTE_FIELDS = ["pair_a", "pair_b", "expert", "verdict", "timestamp"]


def write_tasks_file(tasks: list[ReviewTask], path) -> None:
    lines = [format_record("task", [
        ("pair_a", t.pair.a), ("pair_b", t.pair.b), ("rank", str(t.pair.rank)),
        ("source", t.pair.source), ("media_a", t.media_a),
        ("media_b", t.media_b)]) for t in tasks]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_tasks_file(path) -> list[ReviewTask]:
    tasks = []
    for line_no, kind, fields in read_records(path):
        if kind != "task":
            raise RecordError(f"unexpected record kind {kind!r}", line_no)
        check_fields("task", fields, _TASK_FIELDS, line_no)
        pair = CandidatePair(a=fields["pair_a"], b=fields["pair_b"],
                             rank=int(fields["rank"]), source=fields["source"])
        tasks.append(ReviewTask(pair=pair, media_a=fields["media_a"],
                                media_b=fields["media_b"]))
    return tasks


def parse_vote_line(line: str, line_no: int | None = None) -> VoteRecord:
    kind, fields = parse_record(line, line_no)
    if kind != "vote":
        raise RecordError(f"expected a vote record, got {kind!r}", line_no)
    check_fields("vote", fields, _VOTE_FIELDS, line_no)
    if fields["verdict"] not in ("match", "differ"):
        raise RecordError(
            f"verdict must be match or differ, got {fields['verdict']!r}", line_no)
    return VoteRecord(pair=(fields["pair_a"], fields["pair_b"]),
                      expert=fields["expert"],
                      verdict=fields["verdict"] == "match",
                      timestamp=fields["timestamp"])


def vote_line(vote: VoteRecord) -> str:
    return format_record("vote", [
        ("pair_a", vote.pair[0]), ("pair_b", vote.pair[1]),
        ("expert", vote.expert),
        ("verdict", "match" if vote.verdict else "differ"),
        ("timestamp", vote.timestamp)])


def read_vote_log(path) -> list[VoteRecord]:
    """Replay a vote log; an unterminated trailing line (crash during write)
    is dropped because its vote was never acknowledged."""
    path = Path(path)
    if not path.exists():
        return []
    text = path.read_text(encoding="utf-8")
    complete, _, partial = text.rpartition("\n")
    votes = []
    for line_no, line in enumerate(complete.splitlines(), start=1):
        if line.strip():
            votes.append(parse_vote_line(line.strip(), line_no))
    return votes


class ReviewStore:
    """Task queue plus durable vote log; all writes serialized by one lock."""

    def __init__(self, tasks: list[ReviewTask], experts: list[str],
                 log_path, quorum: int = DEFAULT_QUORUM):
        if not experts:
            raise ReviewError("at least one expert token required")
        self.lock = threading.Lock()
        self.quorum = quorum
        self.experts = set(experts)
        self.log_path = Path(log_path)
        self.tasks: dict[tuple[str, str], ReviewTask] = {}
        order = sorted(tasks, key=lambda t: (t.pair.rank, t.pair.a, t.pair.b))
        for task in order:
            if task.pair.key in self.tasks:
                raise ReviewError(f"duplicate task for pair {task.pair.key}")
            self.tasks[task.pair.key] = task
        self.order = [t.pair.key for t in order]
        self.votes: dict[tuple[tuple[str, str], str], VoteRecord] = {}
        for vote in read_vote_log(self.log_path):
            self._apply(vote)

    def _apply(self, vote: VoteRecord) -> None:
        key = (vote.pair, vote.expert)
        if key in self.votes:
            raise ReviewError(f"duplicate vote in log for {key}")
        if vote.pair not in self.tasks:
            raise ReviewError(f"vote for unknown pair {vote.pair}")
        self.votes[key] = vote
        self.tasks[vote.pair].votes_recorded += 1

    # -- queries -------------------------------------------------------------

    def next_task(self, expert: str) -> ReviewTask | None:
        if expert not in self.experts:
            raise ReviewError(f"unknown expert {expert!r}")
        with self.lock:
            for key in self.order:
                task = self.tasks[key]
                if task.votes_recorded >= self.quorum:
                    continue
                if (key, expert) in self.votes:
                    continue
                return task
        return None

    def submit_vote(self, expert: str, pair_a: str, pair_b: str, verdict: bool,
                    timestamp: str | None = None) -> tuple[str, ReviewTask]:
        """Returns (outcome, task); outcome is 'recorded' or 'duplicate'.

        Identical resubmission is idempotent; a conflicting verdict, a vote
        on a closed task, or an unknown expert/pair is an error."""
        if expert not in self.experts:
            raise ReviewError(f"unknown expert {expert!r}")
        pair = canonical_pair(pair_a, pair_b)
        with self.lock:
            task = self.tasks.get(pair)
            if task is None:
                raise ReviewError(f"unknown pair {pair}")
            existing = self.votes.get((pair, expert))
            if existing is not None:
                if existing.verdict == verdict:
                    return "duplicate", task
                raise ReviewError(
                    f"expert {expert!r} already voted differently on {pair}")
            if task.votes_recorded >= self.quorum:
                raise ReviewError(f"task for pair {pair} is closed")
            stamp = timestamp or datetime.now(timezone.utc).isoformat()
            vote = VoteRecord(pair=pair, expert=expert, verdict=verdict,
                              timestamp=stamp)
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(vote_line(vote) + "\n")
                fh.flush()
            self.votes[(pair, expert)] = vote
            task.votes_recorded += 1
            return "recorded", task

    def progress(self) -> dict[str, int]:
        with self.lock:
            closed = sum(1 for t in self.tasks.values()
                         if t.votes_recorded >= self.quorum)
            return {
                "tasks": len(self.tasks),
                "open": len(self.tasks) - closed,
                "closed": closed,
                "votes": len(self.votes),
                "quorum": self.quorum,
            }

    def all_votes(self) -> list[VoteRecord]:
        with self.lock:
            return sorted(self.votes.values(),
                          key=lambda v: (v.pair, v.expert))


def _task_record(task: ReviewTask, quorum: int) -> str:
    return format_record("task", [
        ("pair_a", task.pair.a), ("pair_b", task.pair.b),
        ("rank", str(task.pair.rank)), ("source", task.pair.source),
        ("media_a", task.media_a), ("media_b", task.media_b),
        ("votes_recorded", str(task.votes_recorded)),
        ("status", task.status(quorum)), ("quorum", str(quorum))])


class _Handler(BaseHTTPRequestHandler):
    store: ReviewStore  # injected by make_server

    def _send(self, code: int, line: str) -> None:
        body = (line + "\n").encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "text/plain; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _error(self, code: int, reason: str) -> None:
        self._send(code, format_record("error", [("reason", reason)]))

    def log_message(self, fmt, *args):  # silence default stderr chatter
        pass

    def do_GET(self):
        url = urlparse(self.path)
        if url.path == "/tasks/next":
            query = parse_qs(url.query)
            expert = query.get("expert", [""])[0]
            try:
                task = self.store.next_task(expert)
            except ReviewError:
                self._error(403, "unknown-expert")
                return
            if task is None:
                self._send(200, format_record(
                    "none", [("remaining", str(self.store.progress()["open"]))]))
            else:
                self._send(200, _task_record(task, self.store.quorum))
        elif url.path == "/progress":
            stats = self.store.progress()
            self._send(200, format_record("progress", [
                (k, str(stats[k])) for k in
                ("tasks", "open", "closed", "votes", "quorum")]))
        else:
            self._error(404, "not-found")

    def do_POST(self):
        if urlparse(self.path).path != "/votes":
            self._error(404, "not-found")
            return
        length = int(self.headers.get("Content-Length", "0"))
        body = self.rfile.read(length).decode("utf-8").strip()
        try:
            kind, fields = parse_record(body)
            if kind != "vote":
                raise RecordError(f"expected vote record, got {kind!r}")
            check_fields("vote", fields, ["expert", "pair_a", "pair_b", "verdict"])
            if fields["verdict"] not in ("match", "differ"):
                raise RecordError("verdict must be match or differ")
        except RecordError:
            self._error(400, "bad-request")
            return
        try:
            outcome, task = self.store.submit_vote(
                expert=fields["expert"], pair_a=fields["pair_a"],
                pair_b=fields["pair_b"], verdict=fields["verdict"] == "match")
        except ReviewError as exc:
            message = str(exc)
            if "unknown expert" in message:
                self._error(403, "unknown-expert")
            elif "closed" in message:
                self._error(409, "task-closed")
            elif "voted differently" in message:
                self._error(409, "conflicting-vote")
            else:
                self._error(404, "unknown-pair")
            return
        self._send(200, format_record("ack", [
            ("pair_a", task.pair.a), ("pair_b", task.pair.b),
            ("votes_recorded", str(task.votes_recorded)),
            ("status", task.status(self.store.quorum)),
            ("duplicate", "true" if outcome == "duplicate" else "false")]))


def make_server(store: ReviewStore, host: str = "127.0.0.1",
                port: int = 0) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"store": store})
    return ThreadingHTTPServer((host, port), handler)
