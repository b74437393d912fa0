"""Message accounting and payload-matching disclosure checks over a run's log."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import UsageError
from .params import WeightVector, linf_dist, max_abs
from .protocol import MESSAGE_KINDS, SERVER, Message, MessageLog, parse_record

LINK_CLASSES = ("server-hospital", "hospital-hospital")


def link_class(msg: Message) -> str:
    if msg.sender == SERVER or msg.receiver == SERVER:
        return "server-hospital"
    return "hospital-hospital"


@dataclass
class MessageStats:
    total_messages: int = 0
    total_bytes: int = 0
    messages_by_kind: dict[str, int] = field(default_factory=lambda: dict.fromkeys(MESSAGE_KINDS, 0))
    bytes_by_kind: dict[str, int] = field(default_factory=lambda: dict.fromkeys(MESSAGE_KINDS, 0))
    messages_by_link: dict[str, int] = field(default_factory=lambda: dict.fromkeys(LINK_CLASSES, 0))
    bytes_by_link: dict[str, int] = field(default_factory=lambda: dict.fromkeys(LINK_CLASSES, 0))
    # round -> [messages, bytes]
    per_round: dict[int, list[int]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_round"] = [
            {"round": t, "messages": m, "bytes": b} for t, (m, b) in sorted(self.per_round.items())
        ]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def count_messages(log: MessageLog | Iterable[Message] | str | Path) -> MessageStats:
    """Tally messages and bytes by kind, link class and round.

    ``log`` may be an in-memory log or the path of a ``messages.log`` file;
    malformed file records raise :class:`~clustersmc.errors.LogParseError`
    carrying the line number.
    """
    if isinstance(log, (str, Path)):
        log = list(_iter_file(log))
    stats = MessageStats()
    for m in log:
        kind, size = m.kind, m.byte_size
        stats.total_messages += 1
        stats.total_bytes += size
        stats.messages_by_kind[kind] += 1
        stats.bytes_by_kind[kind] += size
        link = link_class(m)
        stats.messages_by_link[link] += 1
        stats.bytes_by_link[link] += size
        row = stats.per_round.setdefault(m.round, [0, 0])
        row[0] += 1
        row[1] += size
    return stats


def _iter_file(path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                yield Message(payload=None, **parse_record(line, lineno))


def overhead_ratio(a: MessageStats, b: MessageStats) -> float:
    """Message-count ratio ``a / b``."""
    if b.total_messages == 0:
        raise UsageError("reference log is empty")
    return a.total_messages / b.total_messages


@dataclass
class AuditReport:
    """Outcome of a disclosure check.

    ``server_disclosures`` and ``peer_exact_disclosures`` hold
    ``(round, hospital)`` pairs whose true weights some receiver saw verbatim
    (within tolerance). ``peer_directional`` counts shares whose payload is
    collinear with the source weights; that is inherent to scalar shares and
    is informational only.
    """

    strategy: str
    rounds_audited: int
    tol: float
    server_disclosures: list[tuple[int, int]] = field(default_factory=list)
    peer_exact_disclosures: list[tuple[int, int, int]] = field(default_factory=list)
    peer_directional: int = 0
    stats: MessageStats | None = None

    @property
    def passed(self) -> bool:
        return not self.server_disclosures and not self.peer_exact_disclosures

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "rounds_audited": self.rounds_audited,
            "tol": self.tol,
            "passed": self.passed,
            "server_disclosures": [list(x) for x in self.server_disclosures],
            "peer_exact_disclosures": [list(x) for x in self.peer_exact_disclosures],
            "peer_directional": self.peer_directional,
            "stats": None if self.stats is None else self.stats.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _collinear(p: np.ndarray, w: np.ndarray) -> bool:
    denom = np.linalg.norm(p) * np.linalg.norm(w)
    return bool(denom > 0 and abs(float(p @ w)) / denom > 1 - 1e-9)


def check_disclosure(
    log: MessageLog,
    true_weights: dict[tuple[int, int], WeightVector],
    tol: float = 1e-6,
    strategy: str = "",
) -> AuditReport:
    """Flag every received payload that reproduces some hospital's true weights.

    ``true_weights[(round, k)]`` are hospital ``k``'s post-training weights.
    A payload ``p`` discloses hospital ``i`` when
    ``linf_dist(p, w_i) <= tol * max|w_i|``. Server receipts are checked
    against every hospital; a hospital's receipts against every other
    hospital. Peer findings are ``(round, receiver, hospital)``.
    """
    if not log.keep_payloads:
        raise UsageError("disclosure audit needs a log recorded with payloads")
    log_rounds = sorted({m.round for m in log})
    weight_rounds = sorted({t for t, _ in true_weights})
    if log_rounds != weight_rounds:
        raise UsageError(
            f"log covers rounds {log_rounds[:3]}.. but weights cover {weight_rounds[:3]}.."
        )
    by_round: dict[int, list[tuple[int, WeightVector]]] = {}
    for (t, k), w in sorted(true_weights.items()):
        by_round.setdefault(t, []).append((k, np.asarray(w)))

    report = AuditReport(strategy=strategy, rounds_audited=len(log_rounds), tol=tol)
    server_hits: set[tuple[int, int]] = set()
    peer_hits: set[tuple[int, int, int]] = set()
    for m in log:
        for i, w in by_round[m.round]:
            if m.receiver == i:
                continue
            if linf_dist(m.payload, w) <= tol * max_abs(w):
                if m.receiver == SERVER:
                    server_hits.add((m.round, i))
                else:
                    peer_hits.add((m.round, m.receiver, i))
            elif m.kind == "share" and m.sender == i and _collinear(m.payload, w):
                report.peer_directional += 1
    report.server_disclosures = sorted(server_hits)
    report.peer_exact_disclosures = sorted(peer_hits)
    report.stats = count_messages(log)
    return report
