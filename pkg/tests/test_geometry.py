import pytest

from prefillsim.geometry import (
    BudgetError,
    GeometryError,
    GpuSpec,
    ModelGeometry,
    PrefillMode,
    intermediate_bytes_per_token,
    kv_bytes_per_token,
    max_input_length,
    peak_prefill_memory,
    prefix_cache_capacity,
)
from prefillsim.presets import BUNDLED_PAIRINGS, load_gpu, load_model


@pytest.fixture(scope="module")
def llama8b():
    return load_model("llama-3.1-8b")


@pytest.fixture(scope="module")
def l4():
    return load_gpu("l4")


def tiny_geometry(**overrides):
    fields = dict(
        name="tiny",
        num_layers=2,
        hidden_size=8,
        num_kv_heads=2,
        head_dim=4,
        intermediate_size=16,
        weight_bytes=1000,
        kv_dtype_bytes=2,
        act_dtype_bytes=2,
        act_overhead_factor=1.0,
    )
    fields.update(overrides)
    return ModelGeometry(**fields)


class TestKvBytes:
    def test_llama8b_matches_hand_formula(self, llama8b):
        per_layer, total = kv_bytes_per_token(llama8b)
        assert per_layer == 2 * 8 * 128 * 2 == 4096
        assert total == 4096 * 32 == 131072

    def test_100k_tokens_lands_near_12gb(self, llama8b):
        _, total = kv_bytes_per_token(llama8b)
        bytes_100k = total * 100_000
        assert bytes_100k == 13_107_200_000
        assert abs(bytes_100k - 12e9) / 12e9 <= 0.15

    def test_single_layer_total_equals_per_layer(self):
        geom = tiny_geometry(num_layers=1)
        per_layer, total = kv_bytes_per_token(geom)
        assert total == per_layer

    def test_unit_geometry(self):
        geom = tiny_geometry(
            num_layers=1, num_kv_heads=1, head_dim=1, kv_dtype_bytes=1,
            hidden_size=1, intermediate_size=1,
        )
        per_layer, _ = kv_bytes_per_token(geom)
        assert per_layer == 2  # 2 * 1 head * 1 dim * 1 byte


class TestIntermediateBytes:
    def test_llama8b_scalar_count_is_28672(self, llama8b):
        nbytes = intermediate_bytes_per_token(llama8b)
        assert nbytes == 57344
        assert nbytes // llama8b.act_dtype_bytes == 28672

    def test_ratio_to_per_layer_kv_is_14(self, llama8b):
        inter_scalars = intermediate_bytes_per_token(llama8b) // llama8b.act_dtype_bytes
        kv_scalars = kv_bytes_per_token(llama8b)[0] // llama8b.kv_dtype_bytes
        assert inter_scalars // kv_scalars == 14

    def test_unit_geometry(self):
        geom = tiny_geometry(hidden_size=1, intermediate_size=1, act_dtype_bytes=1)
        assert intermediate_bytes_per_token(geom) == 2


class TestPeakPrefillMemory:
    def test_rejects_zero_tokens(self, llama8b):
        with pytest.raises(GeometryError):
            peak_prefill_memory(llama8b, 0, PrefillMode.full())

    def test_hybrid_with_chunk_n_equals_kv_discard(self, llama8b):
        n = 5000
        assert peak_prefill_memory(llama8b, n, PrefillMode.hybrid(n)) == \
            peak_prefill_memory(llama8b, n, PrefillMode.kv_discard())

    @pytest.mark.parametrize("n", [1, 100, 8192, 50_000])
    @pytest.mark.parametrize("chunk", [1, 512, 8192])
    def test_mode_ordering(self, llama8b, n, chunk):
        hybrid = peak_prefill_memory(llama8b, n, PrefillMode.hybrid(chunk))
        kvd = peak_prefill_memory(llama8b, n, PrefillMode.kv_discard())
        full = peak_prefill_memory(llama8b, n, PrefillMode.full())
        assert hybrid <= kvd <= full

    @pytest.mark.parametrize(
        "mode",
        [PrefillMode.full(), PrefillMode.kv_discard(),
         PrefillMode.chunked(512), PrefillMode.hybrid(512)],
    )
    def test_nondecreasing_in_tokens(self, llama8b, mode):
        peaks = [peak_prefill_memory(llama8b, n, mode) for n in (1, 2, 10, 511, 512, 513, 10_000)]
        assert peaks == sorted(peaks)


class TestMaxInputLength:
    def test_l4_full_anchor_24k(self, llama8b, l4):
        # calibration target: full-KV MIL of ~24,000 tokens on the 24 GB card
        assert max_input_length(llama8b, l4, PrefillMode.full()) == 24_013

    def test_discard_gain_is_1_6x(self, llama8b, l4):
        full = max_input_length(llama8b, l4, PrefillMode.full())
        kvd = max_input_length(llama8b, l4, PrefillMode.kv_discard())
        assert abs(kvd / full - 1.6) <= 0.25

    def test_a100_qwen_full_anchor_11k(self):
        geom = load_model("qwen-32b-fp8")
        gpu = load_gpu("a100")
        mil = max_input_length(geom, gpu, PrefillMode.full())
        assert abs(mil - 11_000) / 11_000 <= 0.01

    def test_no_headroom_gives_zero(self, llama8b):
        peak1 = peak_prefill_memory(llama8b, 1, PrefillMode.full())
        gpu = GpuSpec(
            name="tight", total_memory=peak1 - 1, linear_rate=1.0,
            attn_rate=1.0, fixed_overhead=0.0, link_bandwidth=1.0,
        )
        assert max_input_length(llama8b, gpu, PrefillMode.full()) == 0

    def test_budget_below_weights_rejected(self, llama8b):
        gpu = GpuSpec(
            name="small", total_memory=llama8b.weight_bytes - 1, linear_rate=1.0,
            attn_rate=1.0, fixed_overhead=0.0, link_bandwidth=1.0,
        )
        with pytest.raises(BudgetError):
            max_input_length(llama8b, gpu, PrefillMode.full())

    @pytest.mark.parametrize("gpu_name,model_name", sorted(BUNDLED_PAIRINGS.items()))
    def test_mode_ordering_all_presets(self, gpu_name, model_name):
        geom = load_model(model_name)
        gpu = load_gpu(gpu_name)
        full = max_input_length(geom, gpu, PrefillMode.full())
        chunked = max_input_length(geom, gpu, PrefillMode.chunked())
        hybrid = max_input_length(geom, gpu, PrefillMode.hybrid())
        assert full < chunked < hybrid

    @pytest.mark.parametrize("gpu_name,model_name", sorted(BUNDLED_PAIRINGS.items()))
    def test_discard_alone_helps_less_than_hybrid(self, gpu_name, model_name):
        geom = load_model(model_name)
        gpu = load_gpu(gpu_name)
        full = max_input_length(geom, gpu, PrefillMode.full())
        kvd = max_input_length(geom, gpu, PrefillMode.kv_discard())
        hybrid = max_input_length(geom, gpu, PrefillMode.hybrid())
        assert kvd / full < hybrid / full

    def test_monotone_in_weights_and_memory(self, llama8b, l4):
        import dataclasses

        base = max_input_length(llama8b, l4, PrefillMode.full())
        heavier = dataclasses.replace(llama8b, weight_bytes=llama8b.weight_bytes + 10**9)
        assert max_input_length(heavier, l4, PrefillMode.full()) <= base
        bigger = dataclasses.replace(l4, total_memory=l4.total_memory + 10**9)
        assert max_input_length(llama8b, bigger, PrefillMode.full()) >= base


class TestPrefixCacheCapacity:
    def test_at_hybrid_mil_capacity_is_zero(self, llama8b, l4):
        mil = max_input_length(llama8b, l4, PrefillMode.hybrid())
        assert prefix_cache_capacity(llama8b, l4, mil) == 0

    def test_above_hybrid_mil_rejected(self, llama8b, l4):
        mil = max_input_length(llama8b, l4, PrefillMode.hybrid())
        with pytest.raises(BudgetError):
            prefix_cache_capacity(llama8b, l4, mil + 1)

    def test_doubling_memory_increases_capacity(self, llama8b, l4):
        import dataclasses

        doubled = dataclasses.replace(l4, total_memory=2 * l4.total_memory)
        assert prefix_cache_capacity(llama8b, doubled, 20_000) > \
            prefix_cache_capacity(llama8b, l4, 20_000)

    def test_l4_at_20k_matches_hand_evaluation(self, llama8b, l4):
        # independent spreadsheet of the closed form:
        # free = 24e9 - weights - kv_layer*20000 - ceil(3.48 * 57344 * 8192)
        import math

        free = (
            24_000_000_000
            - 16_060_522_496
            - 4096 * 20_000
            - math.ceil(3.48 * 57344 * 8192)
        )
        expected = free // 131072
        assert expected == 47_476
        assert prefix_cache_capacity(llama8b, l4, 20_000) == expected


class TestValidation:
    def test_dtype_bytes_restricted(self):
        with pytest.raises(GeometryError):
            tiny_geometry(kv_dtype_bytes=3)

    def test_intermediate_below_hidden_rejected(self):
        with pytest.raises(GeometryError):
            tiny_geometry(intermediate_size=4)

    def test_nonpositive_counts_rejected(self):
        with pytest.raises(GeometryError):
            tiny_geometry(num_layers=0)

    def test_chunk_required_positive(self):
        with pytest.raises(GeometryError):
            PrefillMode.chunked(0)

    def test_full_takes_no_chunk(self):
        with pytest.raises(GeometryError):
            PrefillMode("full", 128)
