from hypothesis import given, strategies as st

from varicon.rng import Xorshift, _splitmix64


def test_splitmix_reference_value():
    # first output of the reference splitmix64 stream seeded with 0
    assert _splitmix64(0) == 0xE220A8397B1DCDAF


def test_update_rule_written_out():
    r = Xorshift(7)
    s = r.state
    s ^= s >> 12
    s ^= (s << 25) % 2**64
    s ^= s >> 27
    assert r.next_u64() == (s * 0x2545F4914F6CDD1D) % 2**64


@given(st.integers(min_value=0, max_value=2**64 - 1))
def test_same_seed_same_stream(seed):
    a, b = Xorshift(seed), Xorshift(seed)
    assert [a.random() for _ in range(5)] == [b.random() for _ in range(5)]


@given(st.integers(min_value=0, max_value=2**32), st.floats(-5, 5), st.floats(0.1, 5))
def test_uniform_in_range(seed, lo, width):
    r = Xorshift(seed)
    for _ in range(20):
        assert lo <= r.uniform(lo, lo + width) <= lo + width
