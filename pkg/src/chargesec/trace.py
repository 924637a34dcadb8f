"""Trace log: append-only JSONL with an embedded config header.

Line one is the header (scenario name, seed, tool version, the full
normalized config). Every following line is one event with a dense
``index`` so deletions are detectable. The final event has kind
``run_end`` and carries a digest over the header and every earlier
event, so any later edit to a stored trace is detectable too; a trace
without it is incomplete and refuses verification.

Everything the verdict layer needs is in the events themselves, which
is what makes ``verify-trace`` possible without re-running the
simulation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import CorruptTrace, IncompleteTrace

TOOL_VERSION = "0.1.0"


def _digest(header: dict, events: list) -> str:
    body = json.dumps({"header": header, "events": events},
                      sort_keys=True, separators=(",", ":"))
    return "sha256:" + hashlib.sha256(body.encode("utf-8")).hexdigest()


class TraceBuilder:
    def __init__(self, scenario_name: str, seed: int, config_dict: dict):
        self.header = {
            "scenario": scenario_name,
            "seed": seed,
            "tool_version": TOOL_VERSION,
            "config": config_dict,
        }
        self.events: list[dict] = []
        self._finished = False

    def append(self, kind: str, **fields) -> int:
        if self._finished:
            raise IncompleteTrace("trace already finished")
        index = len(self.events)
        event = {"index": index, "kind": kind}
        event.update(fields)
        self.events.append(event)
        return index

    def finish(self) -> None:
        if not self._finished:
            # Digest everything before the run_end record itself.
            digest = _digest(self.header, self.events)
            self.append("run_end", event_count=len(self.events), digest=digest)
            self._finished = True

    def freeze(self) -> "Trace":
        self.finish()
        return Trace(dict(self.header), list(self.events))

    def write(self, path: str | Path) -> None:
        self.finish()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"header": self.header}, sort_keys=True) + "\n")
            for event in self.events:
                fh.write(json.dumps(event, sort_keys=True) + "\n")


@dataclass(frozen=True)
class Trace:
    header: dict
    events: list

    @property
    def scenario(self) -> str:
        return self.header.get("scenario", "")

    @property
    def seed(self) -> int:
        return int(self.header.get("seed", 0))

    @property
    def config_dict(self) -> dict:
        return self.header.get("config", {})

    def of_kind(self, kind: str) -> list[dict]:
        return [e for e in self.events if e.get("kind") == kind]


def load_trace(path: str | Path) -> Trace:
    """Parse and structurally validate a trace file.

    Dense indices and a terminating ``run_end`` are required; anything
    else raises :class:`CorruptTrace` or :class:`IncompleteTrace` with
    the offending line number.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise IncompleteTrace(f"{path}: empty trace")
    try:
        first = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorruptTrace(f"{path}:1: not JSON: {exc}") from exc
    header = first.get("header")
    if not isinstance(header, dict) or "config" not in header:
        raise IncompleteTrace(f"{path}:1: missing header with embedded config")

    events: list[dict] = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            event = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise CorruptTrace(f"{path}:{lineno}: not JSON: {exc}") from exc
        if not isinstance(event, dict) or "index" not in event or "kind" not in event:
            raise CorruptTrace(f"{path}:{lineno}: event needs index and kind")
        expected = len(events)
        if event["index"] != expected:
            raise CorruptTrace(
                f"{path}:{lineno}: index {event['index']} where {expected} expected; "
                f"trace edited or truncated")
        events.append(event)

    if not events or events[-1].get("kind") != "run_end":
        raise IncompleteTrace(f"{path}: missing run_end record")
    if events[-1].get("event_count") != len(events) - 1:
        raise CorruptTrace(f"{path}: run_end count disagrees with the events")
    recorded = events[-1].get("digest")
    if recorded != _digest(header, events[:-1]):
        raise CorruptTrace(f"{path}: content digest mismatch; trace edited")
    return Trace(header, events)
