import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from learncodes.channels import ChannelSpec, NoiseStream, apply_channel
from learncodes.conv import (
    GENERATOR_TABLE,
    ConvCodeSpec,
    ConvEncoder,
    DelayConstraint,
    Metric,
    bpsk_modulate,
    conv_encode,
    ml_decode_bruteforce,
    octal_to_taps,
    radar_clip_preprocess,
    viterbi_decode,
)
from learncodes.errors import ConfigurationError, InputError, UsageError
from learncodes.evaluation import ConvCodec, StopRule, measure_ber

RSC57 = ConvCodeSpec.from_octal(("5", "7"), "7", m=2)

# rows transcribed independently: m -> (rate-1/2 gens, rate-1/3 gens, rate-1/4 gens, feedback)
PUBLISHED_ROWS = {
    1: ("2 3", "1 3 3", "1 1 3 3", "3"),
    2: ("5 7", "5 7 7", "5 7 7 7", "7"),
    3: ("15 17", "13 15 17", "13 15 15 17", "17"),
    4: ("23 35", "25 33 37", "25 27 33 37", "37"),
    5: ("53 75", "47 53 75", "53 67 71 75", "75"),
    6: ("133 171", "133 145 175", "135 135 147 163", "163"),
    7: ("247 371", "225 331 367", "237 275 313 357", "357"),
}


def direct_recurrence(msg, gens, fb, m, start=0):
    """Bit-level reference encoder written straight from the register equations."""
    reg = [(start >> (m - 1 - i)) & 1 for i in range(m)]      # reg[i] = a[t-1-i]
    out = []
    for u in msg:
        a = u
        for i in range(1, m + 1):
            a ^= fb[i] & reg[i - 1]
        for g in gens:
            v = g[0] & a
            for i in range(1, m + 1):
                v ^= g[i] & reg[i - 1]
            out.append(v)
        reg = [a] + reg[:-1]
    return out, reg


def test_octal_examples():
    assert octal_to_taps(7, 2) == [1, 1, 1]
    assert octal_to_taps(5, 2) == [1, 0, 1]
    assert octal_to_taps(171, 6) == [1, 1, 1, 1, 0, 0, 1]
    with pytest.raises(ConfigurationError):
        octal_to_taps(17, 2)


def test_generator_table_fidelity():
    for m, (g2, g3, g4, fb) in PUBLISHED_ROWS.items():
        for n, gens in ((2, g2), (3, g3), (4, g4)):
            assert GENERATOR_TABLE[(n, m)] == (tuple(gens.split()), fb)
            spec = ConvCodeSpec.from_table(f"1/{n}", m)
            assert spec.n == n and spec.m == m and spec.feedback[0] == 1
            assert all(len(g) == m + 1 for g in spec.generators)
    assert len(GENERATOR_TABLE) == 21


def test_encode_examples():
    ff = ConvCodeSpec.from_octal(("7", "5"), None, m=2)
    assert not ff.recursive
    assert list(conv_encode([1, 0, 0], ff)) == [1, 1, 1, 0, 1, 1]
    for key in GENERATOR_TABLE:
        spec = ConvCodeSpec.from_table(f"1/{key[0]}", key[1])
        assert not conv_encode(np.zeros(9, dtype=int), spec).any()
    with pytest.raises(InputError):
        conv_encode([0, 2, 1], RSC57)


def test_rsc_matches_direct_recurrence():
    msg = [1, 0, 0, 0, 0, 0]
    expect, _ = direct_recurrence(msg, RSC57.generators, RSC57.feedback, 2)
    assert list(conv_encode(msg, RSC57)) == expect
    # g12 = feedback 7: second stream is systematic
    assert list(conv_encode(msg, RSC57)[1::2]) == msg


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(sorted(GENERATOR_TABLE)), st.lists(st.integers(0, 1), min_size=1,
                                                            max_size=30))
def test_every_table_code_matches_direct_recurrence(key, msg):
    spec = ConvCodeSpec.from_table(f"1/{key[0]}", key[1])
    expect, _ = direct_recurrence(msg, spec.generators, spec.feedback, spec.m)
    assert list(conv_encode(msg, spec)) == expect


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(sorted(GENERATOR_TABLE)), st.integers(1, 40), st.integers(0, 2**31))
def test_linearity(key, K, seed):
    spec = ConvCodeSpec.from_table(f"1/{key[0]}", key[1])
    rng = np.random.default_rng(seed)
    u1, u2 = rng.integers(0, 2, (2, K))
    lhs = conv_encode(u1 ^ u2, spec)
    assert np.array_equal(lhs, conv_encode(u1, spec) ^ conv_encode(u2, spec))


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(sorted(GENERATOR_TABLE)), st.integers(1, 40), st.integers(0, 2**31))
def test_tail_biting_closure(key, K, seed):
    spec = ConvCodeSpec.from_table(f"1/{key[0]}", key[1], tail_biting=True)
    enc = ConvEncoder(spec)
    msg = np.random.default_rng(seed).integers(0, 2, (3, K))
    if not enc.tail_biting_ok(K):
        return
    _, zs = enc.run(msg)
    start = enc.tail_biting_start(zs, K)
    _, end = enc.run(msg, start)
    np.testing.assert_array_equal(start, end)
    for row, s in zip(msg, start):
        code, reg = direct_recurrence(list(row), spec.generators, spec.feedback, spec.m, int(s))
        assert reg == [(int(s) >> (spec.m - 1 - i)) & 1 for i in range(spec.m)]


def test_tail_biting_singular_lengths():
    enc = ConvEncoder(ConvCodeSpec.from_octal(("5", "7"), "7", m=2, tail_biting=True))
    # feedback 1 + D + D^2 has period 3
    assert [K for K in range(1, 13) if not enc.tail_biting_ok(K)] == [3, 6, 9, 12]


def test_bpsk():
    assert list(bpsk_modulate([0, 1])) == [-1.0, 1.0]
    z = bpsk_modulate(np.zeros(8, dtype=int))
    assert np.all(z == -1) and np.mean(z ** 2) == 1.0
    bits = np.random.default_rng(0).integers(0, 2, 50)
    assert np.array_equal((bpsk_modulate(bits) > 0).astype(int), bits)


@pytest.mark.parametrize("tb", [False, True])
@pytest.mark.parametrize("window", [None, 0, 1, 3, 10])
def test_noiseless_recovery(tb, window):
    K = 20
    for key in [(2, 2), (3, 3), (4, 5), (2, 7)]:
        spec = ConvCodeSpec.from_table(f"1/{key[0]}", key[1], tail_biting=tb)
        msg = np.random.default_rng(1).integers(0, 2, (30, K))
        y = bpsk_modulate(conv_encode(msg, spec))
        if window is not None and tb:
            continue
        if window is not None and window < key[1]:
            # short windows are not guaranteed exact even noiselessly for long memories
            continue
        out = viterbi_decode(y, spec, Metric("gaussian", 0.5), delay=window)
        np.testing.assert_array_equal(out, msg)


def test_length_not_multiple_of_n():
    with pytest.raises(InputError):
        viterbi_decode(np.zeros(7), RSC57)


def test_bruteforce_oracle_examples():
    msg = np.array([[1, 0, 1, 1, 0, 0, 1, 0]])
    y = bpsk_modulate(conv_encode(msg, RSC57))
    np.testing.assert_array_equal(ml_decode_bruteforce(y, RSC57), msg)
    with pytest.raises(UsageError):
        ml_decode_bruteforce(np.zeros((1, 34)), RSC57)


def test_k1_bruteforce_is_threshold_on_codeword_pair():
    y = np.random.default_rng(0).standard_normal((200, 2)) * 1.5
    c0, c1 = bpsk_modulate(conv_encode([0], RSC57)), bpsk_modulate(conv_encode([1], RSC57))
    expect = (((y - c1) ** 2).sum(1) < ((y - c0) ** 2).sum(1)).astype(int)
    np.testing.assert_array_equal(ml_decode_bruteforce(y, RSC57)[:, 0], expect)


@pytest.mark.parametrize("metric", [Metric("gaussian", 0.8), Metric("atn", 0.8, nu=3.0),
                                    Metric("radar_clip", 0.8, threshold=2.0)])
def test_viterbi_equals_bruteforce(metric):
    K = 10
    rng = np.random.default_rng(3)
    msg = rng.integers(0, 2, (1500, K))
    y = apply_channel(bpsk_modulate(conv_encode(msg, RSC57)), ChannelSpec("atn", 1.0),
                      NoiseStream(4))
    np.testing.assert_array_equal(viterbi_decode(y, RSC57, metric),
                                  ml_decode_bruteforce(y, RSC57, metric))


def test_viterbi_equals_bruteforce_other_codes():
    K = 8
    rng = np.random.default_rng(5)
    for key in [(2, 1), (3, 3), (4, 2)]:
        spec = ConvCodeSpec.from_table(f"1/{key[0]}", key[1])
        y = bpsk_modulate(conv_encode(rng.integers(0, 2, (300, K)), spec))
        y = apply_channel(y, ChannelSpec("awgn", 0.0), NoiseStream(6, *key))
        np.testing.assert_array_equal(viterbi_decode(y, spec), ml_decode_bruteforce(y, spec))


def test_delay_constraint():
    assert DelayConstraint(4).window == 4
    assert DelayConstraint.delay_for(1, 7) == 7
    with pytest.raises(ConfigurationError):
        DelayConstraint(-1)


def test_radar_clip_examples():
    y = np.array([0.5, -1.2, 2.9])
    np.testing.assert_array_equal(radar_clip_preprocess(y, 3.0), y)
    np.testing.assert_array_equal(radar_clip_preprocess([10, -10], 3.0), [3.0, -3.0])
    with pytest.raises(ConfigurationError):
        radar_clip_preprocess(y, 0.0)


@pytest.mark.slow
def test_radar_clip_helps_at_rate_one_third():
    spec = ConvCodeSpec.from_table("1/3", 2, tail_biting=True)
    ch = ChannelSpec("radar", 2.0, p=0.05, sigma2_sq=5.0)
    stop = StopRule(min_bit_errors=None, max_blocks=10_000, chunk=2000)
    plain = measure_ber(ConvCodec(spec, 100, "gaussian"), ch, stop=stop, paired=True)
    clip = measure_ber(ConvCodec(spec, 100, "radar_clip"), ch, stop=stop, paired=True)
    assert plain.bits == clip.bits == 1_000_000
    assert clip.ber < plain.ber
