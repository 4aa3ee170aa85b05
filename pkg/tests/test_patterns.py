from collections import Counter
from math import comb

import pytest
from hypothesis import given
from hypothesis import strategies as st

from maskout.patterns import (
    ResponsePattern,
    all_patterns,
    donor_patterns,
    mask,
    maskable_subsets,
    unmask,
)


def P(s):
    return ResponsePattern.from_string(s)


class TestMaskUnmask:
    def test_mask_middle_variable(self):
        # masking variable 2 of a fully observed 3-vector leaves variables 1, 3
        assert mask(P("111"), 1) == P("101")

    def test_mask_only_observed_bit(self):
        assert mask(P("100"), 0) == P("000")

    def test_mask_bit_manipulation(self):
        assert mask(P("01011"), 4) == P("01010")

    def test_mask_already_missing_is_error(self):
        with pytest.raises(ValueError):
            mask(P("101"), 1)

    def test_mask_index_out_of_range(self):
        with pytest.raises(IndexError):
            mask(P("101"), 3)

    def test_unmask_donor_pattern(self):
        assert unmask(P("001"), 0) == P("101")

    def test_unmask_from_empty(self):
        assert unmask(P("000"), 2) == P("001")

    def test_unmask_already_observed_is_error(self):
        with pytest.raises(ValueError):
            unmask(P("101"), 0)

    @given(st.integers(1, 10), st.data())
    def test_round_trips(self, d, data):
        bits = data.draw(st.integers(0, (1 << d) - 1))
        j = data.draw(st.integers(0, d - 1))
        r = ResponsePattern(d=d, bits=bits)
        if r.is_observed(j):
            assert unmask(mask(r, j), j) == r
        else:
            assert mask(unmask(r, j), j) == r


class TestMaskableSubsets:
    def test_printed_k2_set(self):
        got = {p.to_string() for p in maskable_subsets(P("00111"), 2)}
        assert got == {"00110", "00101", "00011", "00100", "00010", "00001"}

    def test_k3_adds_full_triple(self):
        j2 = set(maskable_subsets(P("00111"), 2))
        j3 = set(maskable_subsets(P("00111"), 3))
        assert j3 == j2 | {P("00111")}

    def test_single_observed_variable(self):
        assert maskable_subsets(P("100"), 1) == (P("100"),)

    def test_ordering_is_ascending_by_bits(self):
        out = maskable_subsets(P("111"), 3)
        assert [p.bits for p in out] == sorted(p.bits for p in out)

    def test_cardinality_exhaustive_small_d(self):
        for d in range(1, 7):
            for r in all_patterns(d):
                if r.bits == 0:
                    continue
                for K in range(1, d + 1):
                    expected = sum(comb(r.weight(), k) for k in range(1, min(K, r.weight()) + 1))
                    assert len(maskable_subsets(r, K)) == expected


class TestDonorPatterns:
    def test_printed_u2_set(self):
        got = [p.to_string() for p in donor_patterns(P("010"), 0, 2)]
        assert got == ["110", "111"]

    def test_k1_is_single_donor_pattern(self):
        assert donor_patterns(P("010"), 0, 1) == (unmask(P("010"), 0),)

    def test_two_bit_enumeration(self):
        got = {p.to_string() for p in donor_patterns(P("00"), 0, 2)}
        assert got == {"10", "11"}

    def test_observed_variable_is_error(self):
        with pytest.raises(ValueError):
            donor_patterns(P("010"), 1, 2)

    def test_k_equal_d_gives_all_supersets(self):
        # masking-all-out: every pattern observing r plus the target variable
        for d in range(1, 6):
            for r in all_patterns(d):
                for j in r.missing_indices():
                    base = unmask(r, j)
                    expected = {s for s in all_patterns(d) if base.is_subset_of(s)}
                    assert set(donor_patterns(r, j, d)) == expected


class TestReparameterization:
    def test_identity_small_d(self):
        # for every nonzero s, {(s minus j, j) : j in s} = {(r, j) : r != full,
        # j missing in r, s = r plus j}, as multisets
        for d in range(1, 6):
            full = ResponsePattern.full(d)
            for s in all_patterns(d):
                if s.bits == 0:
                    continue
                left = Counter((mask(s, j).bits, j) for j in s.observed_indices())
                right = Counter(
                    (r.bits, j)
                    for r in all_patterns(d) if r != full
                    for j in r.missing_indices()
                    if unmask(r, j) == s
                )
                assert left == right


class TestTextForm:
    def test_variable_one_is_leftmost(self):
        r = ResponsePattern.from_indices(3, [0, 2])
        assert r.to_string() == "101"

    @given(st.integers(1, 12), st.data())
    def test_string_round_trip(self, d, data):
        bits = data.draw(st.integers(0, (1 << d) - 1))
        r = ResponsePattern(d=d, bits=bits)
        assert ResponsePattern.from_string(r.to_string()) == r

    def test_rejects_bad_strings(self):
        with pytest.raises(ValueError):
            ResponsePattern.from_string("10a")
        with pytest.raises(ValueError):
            ResponsePattern.from_string("")


class TestBasics:
    def test_d_bounds(self):
        with pytest.raises(ValueError):
            ResponsePattern(d=0, bits=0)
        with pytest.raises(ValueError):
            ResponsePattern(d=65, bits=0)

    def test_complement(self):
        assert P("101").complement() == P("010")

    def test_prefix_detection(self):
        assert P("11100").is_prefix()
        assert P("00000").is_prefix()
        assert not P("10100").is_prefix()
