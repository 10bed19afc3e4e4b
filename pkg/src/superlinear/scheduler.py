"""Discrete simulation of bucketed span-attention dispatch.

(query, span) work items are grouped by key-block footprint: the span's
final block and its length in blocks. A bucket's items share one K/V access
pattern, so a tile packs up to ``tile_capacity`` items of one bucket.
Tiles are statically partitioned over workers; a worker that runs dry
steals from the tail of the most loaded worker. Windows are not bucketed:
they form a separate uniform stream.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .config import AttnConfig
from .layer import geometry_counts
from .spans import Span


class BucketKey(NamedTuple):
    end_block: int
    length_blocks: int

    def blocks(self) -> range:
        return range(self.end_block - self.length_blocks + 1, self.end_block + 1)


WorkItem = tuple[int, Span]


def bucket_key(span: Span, block_size: int) -> BucketKey:
    end = span.hi // block_size
    return BucketKey(end, end - span.lo // block_size + 1)


def bucketize(work_items: Iterable[WorkItem], block_size: int) -> dict[BucketKey, list[WorkItem]]:
    """Group items by footprint; keys come back in canonical ascending order."""
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    buckets: dict[BucketKey, list[WorkItem]] = {}
    for item in work_items:
        buckets.setdefault(bucket_key(item[1], block_size), []).append(item)
    return {k: buckets[k] for k in sorted(buckets)}


def bucketize_pass_count(buckets: dict) -> int:
    """Work of bucketing: one hashing pass over items plus one walk over buckets."""
    return sum(len(v) for v in buckets.values()) + len(buckets)


def footprint_violations(buckets: dict[BucketKey, list[WorkItem]], block_size: int) -> list[WorkItem]:
    """Items whose touched key blocks differ from the blocks implied by their bucket key."""
    bad = []
    for key, items in buckets.items():
        want = set(key.blocks())
        for item in items:
            sp = item[1]
            if set(range(sp.lo // block_size, sp.hi // block_size + 1)) != want:
                bad.append(item)
    return bad


@dataclass(frozen=True)
class Tile:
    key: BucketKey
    items: int

    @property
    def cost(self) -> int:
        return self.items * self.key.length_blocks


@dataclass
class ScheduleStats:
    num_buckets: int
    items_per_bucket: dict[BucketKey, int]
    tiles_issued: int
    occupancy_proxy: float
    steal_events: int
    total_items: int = 0
    makespan: int = 0
    utilization: float = 0.0
    tile_fills: list[int] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "num_buckets": self.num_buckets,
            "histogram": [[k.end_block, k.length_blocks, n] for k, n in self.items_per_bucket.items()],
            "tiles_issued": self.tiles_issued,
            "occupancy_proxy": self.occupancy_proxy,
            "steal_events": self.steal_events,
            "total_items": self.total_items,
            "makespan": self.makespan,
            "utilization": self.utilization,
        }


def make_tiles(buckets: dict[BucketKey, list], tile_capacity: int) -> list[Tile]:
    tiles = []
    for key in sorted(buckets):
        n = len(buckets[key])
        for a in range(0, n, tile_capacity):
            tiles.append(Tile(key, min(tile_capacity, n - a)))
    return tiles


def simulate_dispatch(buckets: dict[BucketKey, list], workers: int, tile_capacity: int) -> ScheduleStats:
    """Deterministic event simulation of tile claiming with work stealing.

    The canonical tile list is split into ``workers`` contiguous ranges.
    Each worker claims the head of its own range (a per-worker atomic
    counter); when empty it takes the tail tile of the worker with the most
    tiles left, lowest worker id on ties. Events at equal times are
    processed in worker-id order.
    """
    if workers < 1 or tile_capacity < 1:
        raise ValueError("workers and tile_capacity must be >= 1")
    tiles = make_tiles(buckets, tile_capacity)
    n = len(tiles)
    per = -(-n // workers) if n else 0
    head = [min(n, w * per) for w in range(workers)]
    tail = [min(n, (w + 1) * per) for w in range(workers)]
    heap = [(0, w) for w in range(workers)]
    heapq.heapify(heap)
    steals = 0
    makespan = busy = 0
    while heap:
        now, w = heapq.heappop(heap)
        if head[w] < tail[w]:
            t = head[w]
            head[w] += 1
        else:
            victim = max(range(workers), key=lambda v: (tail[v] - head[v], -v))
            if tail[victim] <= head[victim]:
                makespan = max(makespan, now)
                continue
            tail[victim] -= 1
            t = tail[victim]
            steals += 1
        cost = tiles[t].cost
        busy += cost
        heapq.heappush(heap, (now + cost, w))
    hist = {k: len(v) for k, v in sorted(buckets.items())}
    total = sum(hist.values())
    occ = total / (n * tile_capacity) if n else 1.0
    util = busy / (workers * makespan) if makespan else 1.0
    return ScheduleStats(len(hist), hist, n, occ, steals, total, makespan, util, [t.items for t in tiles])


def sorting_baseline_cost(work_items, head_dim: int = 64, itemsize: int = 8, num_heads: int = 1) -> tuple[int, int]:
    """Analytic cost of the global-sort alternative.

    ``sort_ops = ceil(n log2 n)`` comparisons; ``permute_bytes`` covers two
    passes over the query/output rows (gather before, scatter after).
    """
    n = work_items if isinstance(work_items, int) else len(work_items)
    sort_ops = 0 if n <= 1 else math.ceil(n * math.log2(n))
    permute_bytes = 2 * n * head_dim * itemsize * num_heads
    return sort_ops, permute_bytes


def prefill_workload(L: int, cfg: AttnConfig) -> list[WorkItem]:
    """Selected-span work items of a content-free prefill pass of length ``L``."""
    return geometry_counts(L, cfg).spans(cfg)


def histogram_rows(stats: ScheduleStats) -> list[tuple[int, int, int]]:
    return [(k.end_block, k.length_blocks, n) for k, n in stats.items_per_bucket.items()]
