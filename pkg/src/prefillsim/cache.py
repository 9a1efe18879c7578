"""Block-granular prefix cache with LRU eviction and suffix discard.

Cached token prefixes form a trie of fixed-size blocks. Each block is
keyed by a digest chained on its parent's digest, so a digest being
resident means that exact block-aligned prefix is resident. Lookups
exploit prefix closure (a block is present only if its parent is) and
binary-search the chain instead of walking the trie.

Inserting a sequence stores leading blocks while capacity allows and
discards the rest: the suffix of an oversized request is never cached.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from hashlib import blake2b
from typing import Iterable, Sequence

import numpy as np

_DIGEST_SIZE = 16


class CacheError(ValueError):
    """Invalid cache configuration or operation."""


class EvictionShortfall(CacheError):
    """Eviction could not free enough space while honoring protection."""

    def __init__(self, needed_tokens: int, freed_tokens: int):
        self.needed_tokens = needed_tokens
        self.freed_tokens = freed_tokens
        super().__init__(
            f"needed {needed_tokens} tokens but only {freed_tokens} were evictable"
        )


def block_chain(
    tokens: Sequence[int] | np.ndarray,
    block_tokens: int,
    base: Sequence[bytes] = (),
) -> list[bytes]:
    """Digest chain of the full blocks of a token sequence.

    `base` may carry an already-computed chain for the leading
    len(base) * block_tokens tokens (they are not re-hashed; the caller
    guarantees they match, e.g. a shared user-profile prefix).
    """
    if block_tokens < 1:
        raise CacheError("block_tokens must be >= 1")
    arr = np.ascontiguousarray(tokens, dtype=np.uint32)
    n_blocks = len(arr) // block_tokens
    chain = list(base)
    if len(chain) > n_blocks:
        raise CacheError("base chain longer than the sequence's block count")
    prev = chain[-1] if chain else b""
    for i in range(len(chain), n_blocks):
        raw = arr[i * block_tokens : (i + 1) * block_tokens].tobytes()
        prev = blake2b(prev + raw, digest_size=_DIGEST_SIZE).digest()
        chain.append(prev)
    return chain


@dataclass(frozen=True)
class CacheConfig:
    """Sizing of one instance's prefix cache."""

    capacity_tokens: int
    block_tokens: int = 16

    def __post_init__(self):
        if self.block_tokens < 1:
            raise CacheError("block_tokens must be >= 1")
        if self.capacity_tokens < 0:
            raise CacheError("capacity_tokens must be >= 0")

    @property
    def capacity_blocks(self) -> int:
        return self.capacity_tokens // self.block_tokens


@dataclass
class _Block:
    parent: bytes | None
    depth: int  # 1-based position along its chain
    children: int = 0
    last_use: float = 0.0
    ins_order: int = 0


class PrefixCache:
    """LRU prefix cache over block digest chains."""

    def __init__(self, config: CacheConfig):
        self.config = config
        self._blocks: dict[bytes, _Block] = {}
        self._leaves: dict[bytes, None] = {}
        self._ins_counter = 0
        self.version = 0  # bumped on every mutation, for memoizing probes

    # -- inspection ---------------------------------------------------

    @property
    def used_tokens(self) -> int:
        return len(self._blocks) * self.config.block_tokens

    @property
    def resident_blocks(self) -> int:
        return len(self._blocks)

    def _chain(self, tokens) -> list[bytes]:
        return block_chain(tokens, self.config.block_tokens)

    def match(self, tokens) -> int:
        """Tokens of the longest resident prefix; read-only, block-aligned."""
        return self.match_chain(self._chain(tokens))

    def match_chain(self, chain: Sequence[bytes]) -> int:
        blocks = self._blocks
        if not chain or chain[0] not in blocks:
            return 0
        lo, hi = 1, len(chain)  # chain[:lo] resident, chain[:hi+1] unknown
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if chain[mid - 1] in blocks:
                lo = mid
            else:
                hi = mid - 1
        return lo * self.config.block_tokens

    # -- mutation -----------------------------------------------------

    def insert(self, tokens, now: float) -> int:
        """Cache leading blocks of the sequence, discarding the suffix.

        Resident path blocks are touched; new blocks are admitted while
        capacity allows, evicting LRU leaves outside the insertion path.
        Returns the resident prefix length of this sequence afterwards.
        """
        return self.insert_chain(self._chain(tokens), now)

    def insert_chain(self, chain: Sequence[bytes], now: float) -> int:
        self.version += 1
        capacity = self.config.capacity_blocks
        path = set(chain)
        stored = 0
        for i, digest in enumerate(chain):
            node = self._blocks.get(digest)
            if node is not None:
                node.last_use = now
                stored = i + 1
                continue
            if len(self._blocks) >= capacity and not self._evict_one(path):
                break  # no room: this block and the whole suffix are dropped
            parent = chain[i - 1] if i > 0 else None
            self._add_block(digest, parent, now)
            stored = i + 1
        return stored * self.config.block_tokens

    def evict_to(self, needed_tokens: int, protect: Sequence[bytes] = ()) -> int:
        """Evict LRU leaves outside `protect` until headroom >= needed_tokens."""
        if needed_tokens > self.config.capacity_tokens:
            raise CacheError("cannot free more than the cache capacity")
        protected = set(protect)
        freed = 0
        while self.config.capacity_tokens - self.used_tokens < needed_tokens:
            if not self._evict_one(protected):
                raise EvictionShortfall(needed_tokens, freed)
            freed += self.config.block_tokens
        if freed:
            self.version += 1
        return freed

    # -- internals ----------------------------------------------------

    def _add_block(self, digest: bytes, parent: bytes | None, now: float):
        self._ins_counter += 1
        self._blocks[digest] = _Block(
            parent=parent,
            depth=1 if parent is None else self._blocks[parent].depth + 1,
            last_use=now,
            ins_order=self._ins_counter,
        )
        self._leaves[digest] = None
        if parent is not None:
            pnode = self._blocks[parent]
            pnode.children += 1
            self._leaves.pop(parent, None)

    def _evict_one(self, protected: set[bytes]) -> bool:
        """Evict the least-recently-used unprotected leaf. False if none."""
        victim = None
        victim_key = None
        for digest in self._leaves:
            if digest in protected:
                continue
            node = self._blocks[digest]
            key = (node.last_use, node.ins_order)
            if victim_key is None or key < victim_key:
                victim, victim_key = digest, key
        if victim is None:
            return False
        node = self._blocks.pop(victim)
        del self._leaves[victim]
        if node.parent is not None:
            pnode = self._blocks[node.parent]
            pnode.children -= 1
            if pnode.children == 0:
                self._leaves[node.parent] = None
        return True

    def check_invariants(self):
        """Structural sanity used by the test suite."""
        assert self.used_tokens <= self.config.capacity_tokens
        for digest, node in self._blocks.items():
            if node.parent is not None:
                assert node.parent in self._blocks, "prefix closure violated"
                assert self._blocks[node.parent].depth == node.depth - 1
            else:
                assert node.depth == 1
            assert (node.children == 0) == (digest in self._leaves)
        child_counts: dict[bytes, int] = {}
        for node in self._blocks.values():
            if node.parent is not None:
                child_counts[node.parent] = child_counts.get(node.parent, 0) + 1
        for digest, node in self._blocks.items():
            assert node.children == child_counts.get(digest, 0)
