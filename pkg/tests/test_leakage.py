import numpy as np
import pytest

from cpa_parallab import (ArrayConfig, OperandRangeError, PEState, array_power,
                          chain_leakage, hamming_distance, hamming_weight,
                          mac_chain_patterns, pe_step)

UNSIGNED = ArrayConfig(n_pe=1)
SIGNED = ArrayConfig(n_pe=1, signed_weights=True, signed_inputs=True)


def test_hamming_weight_examples():
    assert hamming_weight(0) == 0
    assert hamming_weight(-1) == 32
    assert hamming_weight(11) == 3


def test_hamming_distance_examples():
    assert hamming_distance(5, 5) == 0
    assert hamming_distance(5, 6) == 2
    assert hamming_distance(0, -1) == 32


def test_hamming_weight_complement_invariant():
    rng = np.random.default_rng(1)
    for v in rng.integers(-(2**31), 2**31, size=200):
        assert hamming_weight(int(v)) + hamming_weight(~int(v)) == 32


def test_hamming_distance_is_metric():
    rng = np.random.default_rng(2)
    triples = rng.integers(-(2**31), 2**31, size=(200, 3))
    for a, b, c in triples:
        a, b, c = int(a), int(b), int(c)
        assert hamming_distance(a, b) == hamming_distance(b, a)
        assert hamming_distance(a, a) == 0
        if a != b:
            assert hamming_distance(a, b) > 0
        assert hamming_distance(a, c) <= hamming_distance(a, b) + hamming_distance(b, c)


def test_shift_preserves_hamming_weight_when_top_bits_clear():
    rng = np.random.default_rng(3)
    for v in rng.integers(0, 2**20, size=100):
        for k in (1, 2, 5, 11):
            assert hamming_weight(int(v) << k) == hamming_weight(int(v))


def test_pe_step_first_multiplication():
    state, leak = pe_step(PEState(), 2, 3, UNSIGNED)
    assert state == PEState(accumulator=6, tau=1)
    assert leak == 2


def test_pe_step_subsequent_uses_hamming_distance():
    state, _ = pe_step(PEState(), 2, 3, UNSIGNED)
    state, leak = pe_step(state, 1, 1, UNSIGNED)
    assert state.accumulator == 7
    assert leak == 1  # 110 -> 111 flips one bit


def test_pe_step_negative_product_sign_extends():
    state, leak = pe_step(PEState(), -1, 1, SIGNED)
    assert state.accumulator == -1
    assert leak == 32


def test_pe_step_rejects_out_of_range_operands():
    with pytest.raises(OperandRangeError, match="weight"):
        pe_step(PEState(), 300, 1, UNSIGNED)
    with pytest.raises(OperandRangeError, match="input"):
        pe_step(PEState(), 1, -1, UNSIGNED)
    with pytest.raises(OperandRangeError, match="weight"):
        pe_step(PEState(), 128, 0, SIGNED)


def test_pe_step_is_deterministic_replay():
    rng = np.random.default_rng(4)
    ws = rng.integers(0, 256, size=8)
    xs = rng.integers(0, 256, size=8)

    def chain():
        st = PEState()
        out = []
        for w, x in zip(ws, xs):
            st, leak = pe_step(st, int(w), int(x), UNSIGNED)
            out.append((st.accumulator, leak))
        return out

    assert chain() == chain()


def test_array_power_sums_single_step():
    s0 = PEState()
    s1, _ = pe_step(s0, 31, 1, UNSIGNED)  # HW(31) = 5
    assert array_power([(s0, s1)]) == 5.0

    states = []
    for w in (3, 7, 15):  # HW 2, 3, 4
        states.append((PEState(), pe_step(PEState(), w, 1, UNSIGNED)[0]))
    assert array_power(states) == 9.0


def test_array_power_requires_common_tau():
    a0 = PEState()
    a1, _ = pe_step(a0, 1, 1, UNSIGNED)
    b1, _ = pe_step(PEState(), 2, 1, UNSIGNED)
    b2, _ = pe_step(b1, 2, 1, UNSIGNED)
    with pytest.raises(ValueError):
        array_power([(a0, a1), (b1, b2)])


def test_array_power_noise_mean():
    # Monte-Carlo oracle: mean of 1e5 noisy sums of {1,1} stays near 2.0
    rng = np.random.default_rng(5)
    s0 = PEState()
    s1, _ = pe_step(s0, 1, 1, UNSIGNED)
    draws = np.array([array_power([(s0, s1), (s0, s1)], noise_sigma=1.0, rng=rng)
                      for _ in range(100_000)])
    assert abs(draws.mean() - 2.0) < 0.02


@pytest.mark.parametrize("config", [UNSIGNED, SIGNED,
                                    ArrayConfig(n_pe=1, signed_weights=True)])
def test_vector_kernels_match_scalar_reference(config):
    rng = np.random.default_rng(6)
    n_pe, n_traces, n_tau = 3, 17, 6
    wlo, whi = config.weight_range
    xlo, xhi = config.input_range
    W = rng.integers(wlo, whi + 1, size=(n_pe, n_tau))
    X = rng.integers(xlo, xhi + 1, size=(n_traces, n_tau))
    leak = chain_leakage(mac_chain_patterns(W, X, config.register_bits))
    for p in range(n_pe):
        for t in range(n_traces):
            st = PEState()
            for k in range(n_tau):
                st, sample = pe_step(st, int(W[p, k]), int(X[t, k]), config)
                assert leak[p, t, k] == sample


def test_kernels_wrap_like_scalar_on_overflow():
    # force wrapping with a narrow register
    config = ArrayConfig(n_pe=1, register_bits=8)
    W = np.full((1, 30), 255)
    X = np.full((4, 30), 255)
    leak = chain_leakage(mac_chain_patterns(W, X, 8))
    st = PEState()
    for k in range(30):
        st, sample = pe_step(st, 255, 255, config)
        assert leak[0, 0, k] == sample
        assert -128 <= st.accumulator <= 127


def test_config_validation():
    with pytest.raises(ValueError):
        ArrayConfig(n_pe=0)
    with pytest.raises(ValueError):
        ArrayConfig(n_pe=1, noise_sigma=-0.5)
    with pytest.raises(ValueError):
        ArrayConfig(n_pe=1, register_bits=128)
    assert ArrayConfig(n_pe=1).weight_range == (0, 255)
    assert SIGNED.weight_range == (-128, 127)
