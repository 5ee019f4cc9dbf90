"""In-process duplex channel with a byte and round meter."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .errors import TransportError

PARTIES = ("interposer", "chiplet")


@dataclass
class Transport:
    """Two mailboxes plus a full transcript of everything sent."""

    transcript: list[tuple[str, bytes]] = field(default_factory=list)
    _boxes: dict[str, deque] = field(default_factory=lambda: {p: deque() for p in PARTIES})
    fail_after: int | None = None  # fault injection: drop every send past this many messages

    def send(self, sender: str, payload: bytes) -> None:
        if sender not in PARTIES:
            raise TransportError(f"unknown party {sender!r}")
        if self.fail_after is not None and len(self.transcript) >= self.fail_after:
            raise TransportError("link down")
        receiver = PARTIES[1 - PARTIES.index(sender)]
        self.transcript.append((sender, bytes(payload)))
        self._boxes[receiver].append(bytes(payload))

    def receive(self, party: str) -> bytes:
        box = self._boxes[party]
        if not box:
            raise TransportError(f"no message waiting for {party}")
        return box.popleft()

    @property
    def messages(self) -> int:
        return len(self.transcript)

    @property
    def bytes_sent(self) -> int:
        return sum(len(p) for _, p in self.transcript)

    def bytes_by(self, sender: str) -> int:
        return sum(len(p) for s, p in self.transcript if s == sender)

    @property
    def flows(self) -> int:
        """Maximal runs of consecutive messages in one direction."""
        count, last = 0, None
        for sender, _ in self.transcript:
            if sender != last:
                count += 1
                last = sender
        return count

    @property
    def rounds(self) -> int:
        """Round trips: each pair of opposite-direction flows is one round."""
        return (self.flows + 1) // 2

    def reset_meter(self) -> None:
        self.transcript.clear()
