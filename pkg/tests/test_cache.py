import numpy as np
import pytest

from prefillsim.cache import (
    CacheConfig,
    CacheError,
    EvictionShortfall,
    PrefixCache,
    block_chain,
)


def toks(*ranges):
    """Concatenate integer ranges into a token array."""
    return np.concatenate([np.arange(a, b, dtype=np.uint32) for a, b in ranges])


def make_cache(capacity_tokens, block_tokens=16):
    return PrefixCache(CacheConfig(capacity_tokens=capacity_tokens, block_tokens=block_tokens))


class TestBlockChain:
    def test_partial_block_dropped(self):
        chain = block_chain(toks((0, 40)), 16)
        assert len(chain) == 2

    def test_chain_extends_prefix(self):
        full = block_chain(toks((0, 64)), 16)
        base = block_chain(toks((0, 32)), 16)
        extended = block_chain(toks((0, 64)), 16, base=base)
        assert extended == full

    def test_base_longer_than_sequence_rejected(self):
        base = block_chain(toks((0, 64)), 16)
        with pytest.raises(CacheError):
            block_chain(toks((0, 16)), 16, base=base)


class TestMatch:
    def test_empty_cache(self):
        cache = make_cache(1024)
        assert cache.match(toks((0, 100))) == 0

    def test_block_boundary_arithmetic(self):
        cache = make_cache(1024)
        cache.insert(toks((0, 32)), now=0.0)
        assert cache.match(toks((0, 40))) == 32

    def test_divergence_inside_first_block(self):
        cache = make_cache(1024)
        cache.insert(toks((0, 32)), now=0.0)
        other = toks((0, 32))
        other[7] ^= np.uint32(1)
        assert cache.match(other) == 0

    def test_read_only_and_idempotent(self):
        cache = make_cache(1024)
        cache.insert(toks((0, 64)), now=0.0)
        version = cache.version
        probe = toks((0, 64))
        assert cache.match(probe) == cache.match(probe) == 64
        assert cache.version == version


class TestInsert:
    def test_capacity_four_blocks_discards_two_suffix_blocks(self):
        cache = make_cache(4 * 16)
        stored = cache.insert(toks((0, 6 * 16)), now=0.0)
        assert stored == 4 * 16
        assert cache.used_tokens == 4 * 16
        cache.check_invariants()

    def test_fresh_cache_stores_block_aligned_length(self):
        cache = make_cache(10_000)
        stored = cache.insert(toks((0, 100)), now=0.0)
        assert stored == 96  # 100 rounded down to the block boundary

    def test_disjoint_insert_evicts_older_entry(self):
        # capacity of about one request: A cached, then C evicts it, so a
        # later request sharing A's prefix finds nothing
        cache = make_cache(4 * 16)
        a = toks((0, 64))
        c = toks((1000, 1064))
        d_sharing_a = toks((0, 64), (5000, 5032))
        cache.insert(a, now=0.0)
        cache.insert(c, now=1.0)
        assert cache.match(d_sharing_a) == 0
        cache.check_invariants()

    def test_insert_touches_lru_state(self):
        cache = make_cache(3 * 16)
        a = toks((0, 16))
        b = toks((1000, 1016))
        cache.insert(a, now=0.0)
        cache.insert(b, now=1.0)
        cache.insert(a, now=2.0)  # refresh A so B becomes the LRU entry
        cache.insert(toks((2000, 2032)), now=3.0)  # needs one eviction
        assert cache.match(b) == 0
        assert cache.match(a) == 16
        cache.check_invariants()

    def test_insertion_path_protected_from_self_eviction(self):
        cache = make_cache(4 * 16)
        stored = cache.insert(toks((0, 200)), now=0.0)
        assert stored == 64
        # re-inserting the same sequence must not evict its own prefix
        assert cache.insert(toks((0, 200)), now=1.0) == 64
        cache.check_invariants()


class TestEvictTo:
    def test_headroom_already_sufficient(self):
        cache = make_cache(8 * 16)
        cache.insert(toks((0, 32)), now=0.0)
        assert cache.evict_to(16) == 0

    def test_protect_one_chain_evicts_deepest_leaf_of_other(self):
        cache = make_cache(3 * 16)
        protected = toks((0, 16))
        other = toks((1000, 1032))
        keep = block_chain(protected, 16)
        cache.insert(protected, now=0.0)
        cache.insert(other, now=1.0)
        freed = cache.evict_to(16, protect=keep)
        assert freed == 16
        assert cache.match(protected) == 16
        assert cache.match(other) == 16  # deepest block of the other chain went
        cache.check_invariants()

    def test_fully_protected_cache_reports_shortfall(self):
        cache = make_cache(2 * 16)
        seq = toks((0, 32))
        cache.insert(seq, now=0.0)
        with pytest.raises(EvictionShortfall):
            cache.evict_to(16, protect=block_chain(seq, 16))

    def test_needed_beyond_capacity_rejected(self):
        cache = make_cache(2 * 16)
        with pytest.raises(CacheError):
            cache.evict_to(3 * 16)


class TestProperties:
    def test_random_operations_preserve_invariants(self):
        rng = np.random.default_rng(1234)
        cache = make_cache(capacity_tokens=12 * 8, block_tokens=8)
        sequences = [
            toks((0, 64)), toks((0, 32)), toks((0, 16), (500, 548)),
            toks((200, 280)), toks((200, 232), (700, 724)), toks((900, 996)),
        ]
        for step in range(300):
            op = rng.integers(0, 3)
            seq = sequences[rng.integers(0, len(sequences))]
            if op == 0:
                cache.insert(seq, now=float(step))
            elif op == 1:
                before = cache.version
                cache.match(seq)
                assert cache.version == before
            else:
                try:
                    cache.evict_to(int(rng.integers(0, 5)) * 8)
                except EvictionShortfall:
                    pass
            assert cache.used_tokens <= cache.config.capacity_tokens
            cache.check_invariants()

    def test_suffix_discard_equals_full_caching_under_large_capacity(self):
        rng = np.random.default_rng(99)
        cache = make_cache(100_000)
        for _ in range(20):
            n = int(rng.integers(1, 400))
            start = int(rng.integers(0, 10_000))
            seq = toks((start, start + n))
            stored = cache.insert(seq, now=0.0)
            assert stored == (n // 16) * 16

    def test_capacity_zero_stores_nothing(self):
        cache = make_cache(0)
        assert cache.insert(toks((0, 64)), now=0.0) == 0
        assert cache.used_tokens == 0
