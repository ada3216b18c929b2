"""Harness log file and CLI log parsing."""

from __future__ import annotations

import datetime
import os
import re
import subprocess

_EVENT_RE = re.compile(r"event=(?P<event>\w+)(?P<fields>(?: \w+=\S+)*)")


class LogFile:
    """Append-only harness log with UTC timestamps."""

    def __init__(self, path: str) -> None:
        self.path = path
        dir_path = os.path.dirname(path)
        if dir_path:
            os.makedirs(dir_path, exist_ok=True)
        self._handle = open(path, "a", encoding="utf-8")

    def write(self, message: str, *, level: str = "INFO") -> None:
        stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
        self._handle.write(f"{stamp.replace('+00:00', 'Z')} {level.upper()} {message}\n")
        self._handle.flush()

    def process(self, label: str, result: subprocess.CompletedProcess[str], *, failed: bool = False) -> None:
        level = "ERROR" if failed else "INFO"
        if failed:
            self.write(f"{label} exited with code {result.returncode}", level=level)
        for event in parse_events(result.stderr or ""):
            if event["event"] in {"stage_complete", "stage_failed", "model_selected"}:
                fields = " ".join(f"{key}={value}" for key, value in event.items() if key != "event")
                self.write(f"{label} {event['event']} {fields}", level=level)
        if failed and result.stderr:
            self.write(f"{label} stderr: {result.stderr.strip()[-2000:]}", level=level)

    def close(self) -> None:
        self._handle.close()

    def __enter__(self) -> "LogFile":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()


def open_log(path: str) -> LogFile:
    return LogFile(path)


def parse_events(text: str) -> list[dict[str, str]]:
    """``event=name key=value`` records from the CLI's log output, in order."""
    events: list[dict[str, str]] = []
    for line in text.splitlines():
        match = _EVENT_RE.search(line)
        if match is None:
            continue
        event = {"event": match.group("event")}
        for pair in match.group("fields").split():
            key, _, value = pair.partition("=")
            event[key] = value
        events.append(event)
    return events


def stage_timings(text: str) -> dict[str, float]:
    return {
        event["stage"]: float(event["elapsed_seconds"])
        for event in parse_events(text)
        if event["event"] == "stage_complete" and "elapsed_seconds" in event
    }
