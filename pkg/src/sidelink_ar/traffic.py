"""Quasi-periodic bidirectional AR traffic and per-direction TB queues."""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field


class Direction(enum.IntEnum):
    G2C = 0  # glasses to companion
    C2G = 1  # companion to glasses


class Outcome(enum.Enum):
    PENDING = "pending"
    SUCCESS = "success"
    RX_FAILURE = "rx_failure"
    DROP = "drop"


class DropPolicy(enum.Enum):
    PDB_DROP = "pdb_drop"
    QUEUE_ACROSS_INTERVALS = "queue_across_intervals"


@dataclass(frozen=True)
class TrafficConfig:
    interval_ms: float = 22.0
    g2c_mbps: float = 5.0
    c2g_mbps: float = 5.0
    pdb_ms: float | None = None  # defaults to interval_ms
    drop_policy: DropPolicy = DropPolicy.PDB_DROP
    random_phase: bool = False

    def __post_init__(self):
        if self.pdb_ms is None:
            object.__setattr__(self, "pdb_ms", self.interval_ms)
        if not self.interval_ms > 0:
            raise ValueError("interval_ms must be positive")
        if self.g2c_mbps < 0 or self.c2g_mbps < 0:
            raise ValueError("traffic rates must be non-negative")
        if not self.pdb_ms > 0:
            raise ValueError("pdb_ms must be positive")
        if self.drop_policy is DropPolicy.PDB_DROP and self.pdb_ms > self.interval_ms:
            raise ValueError("pdb_ms may not exceed interval_ms under pdb_drop")


_TERMINAL = (Outcome.SUCCESS, Outcome.RX_FAILURE, Outcome.DROP)


@dataclass(eq=False)
class TransportBlock:
    owner: int
    direction: Direction
    size: int
    arrival_time: int
    deadline: int | None  # slot boundary by which reception must complete
    interval: int = 0
    mcs: int = 0
    outcome: Outcome = Outcome.PENDING
    reception_time: int | None = None
    sinr: float | None = None

    def finish(self, outcome: Outcome, reception_time: int | None = None) -> None:
        if self.outcome is not Outcome.PENDING:
            raise RuntimeError(f"TB already terminal ({self.outcome.value})")
        if outcome not in _TERMINAL:
            raise ValueError(f"{outcome} is not a terminal outcome")
        self.outcome = outcome
        self.reception_time = reception_time


@dataclass
class PairQueues:
    """FIFO queues of one glasses/companion pair, one per direction."""

    g2c: deque = field(default_factory=deque)
    c2g: deque = field(default_factory=deque)

    def __getitem__(self, direction: Direction) -> deque:
        return self.g2c if direction is Direction.G2C else self.c2g

    def __len__(self) -> int:
        return len(self.g2c) + len(self.c2g)

    def head_deadline(self) -> int | None:
        """Earliest deadline among head-of-line TBs (None if unbounded or empty)."""
        ds = [q[0].deadline for q in (self.g2c, self.c2g) if q and q[0].deadline is not None]
        return min(ds) if ds else None


def burst_bits(rate: float, interval: float) -> int:
    """Bits generated per interval; ``rate`` in Mbps, ``interval`` in ms."""
    if rate < 0:
        raise ValueError("rate must be non-negative")
    return round(rate * 1e6 * interval / 1000.0)


def segment_burst(bits: int, tb_capacity: int) -> list[int]:
    if tb_capacity <= 0:
        raise ValueError(f"TB capacity must be positive, got {tb_capacity}")
    if bits <= 0:
        return []
    full, rest = divmod(bits, tb_capacity)
    return [tb_capacity] * full + ([rest] if rest else [])


def tbs_needed(bits: int, tb_capacity: int) -> int:
    return math.ceil(bits / tb_capacity) if bits > 0 else 0


def pdb_slots(cfg: TrafficConfig, slot_ms: float) -> int:
    return int(round(cfg.pdb_ms / slot_ms))


def interval_slots(cfg: TrafficConfig, slot_ms: float) -> int:
    return int(round(cfg.interval_ms / slot_ms))


def generate_interval(
    cfg: TrafficConfig,
    user: int,
    t: int,
    capacity: int,
    queues: PairQueues | None = None,
    slot_ms: float = 0.5,
    interval: int = 0,
    mcs: int = 0,
) -> list[TransportBlock]:
    """Segment one interval's burst in both directions and enqueue it.

    The returned TBs are also appended to ``queues`` when given.
    """
    if cfg.drop_policy is DropPolicy.PDB_DROP:
        deadline = t + pdb_slots(cfg, slot_ms)
    else:
        deadline = None
    out = []
    for direction, rate in ((Direction.G2C, cfg.g2c_mbps), (Direction.C2G, cfg.c2g_mbps)):
        for size in segment_burst(burst_bits(rate, cfg.interval_ms), capacity):
            tb = TransportBlock(user, direction, size, t, deadline, interval=interval, mcs=mcs)
            out.append(tb)
            if queues is not None:
                queues[direction].append(tb)
    return out


def expire_overdue(
    queue: deque, now: int, policy: DropPolicy = DropPolicy.PDB_DROP
) -> list[TransportBlock]:
    """Drop every pending TB whose deadline is earlier than ``now``.

    ``now`` is a slot boundary; the engine passes the end of the current slot,
    i.e. the earliest reception time a transmission could still achieve.
    Returns the dropped TBs (``len`` gives the drop count).
    """
    if policy is DropPolicy.QUEUE_ACROSS_INTERVALS:
        return []
    dropped = []
    kept = []
    for tb in queue:
        if tb.deadline is not None and tb.deadline < now:
            tb.finish(Outcome.DROP)
            dropped.append(tb)
        else:
            kept.append(tb)
    if dropped:
        queue.clear()
        queue.extend(kept)
    return dropped
