"""Event log for pinning the in-step ordering contract in tests."""

from __future__ import annotations


class EventLog:
    def __init__(self):
        self.events: list[str] = []

    def record(self, tag: str) -> None:
        self.events.append(tag)
