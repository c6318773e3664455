import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from onebit_mimo.dsp_filters import EffectiveFilterMatrix, RateConfig, build_effective_filter, design_pulse
from onebit_mimo.quant_precoder import (
    Budget,
    Constellation,
    ForwardMapping,
    Spectrum,
    assemble_problem,
    build_codeword_matrix,
    check_design,
    codeword_set,
    design_block,
    design_branch,
    enumerate_forward_mappings,
    mapping_count,
    out_of_band_operator,
    solve_single_mapping,
    spectral_bins,
)

BINARY = Constellation((-1.0, 1.0))


def _raw_filter(matrix, mu_tx, mu_rx, n_block, transient=0):
    rates = RateConfig(mu_tx, mu_rx, n_block)
    return EffectiveFilterMatrix(np.asarray(matrix, float), rates, 0, transient, transient, np.zeros(1))


@pytest.fixture(scope="module")
def small_design():
    rates = RateConfig(2, 2, 12)
    filt = build_effective_filter(design_pulse("raised-cosine", 0.1, 6, 1),
                                  design_pulse("root-raised-cosine", 0.22, 6, 2), rates)
    rng = np.random.default_rng(5)
    symbols = Constellation().array[rng.integers(0, 4, 12)]
    budget, spectrum = Budget(1.0, 0.96, 2), Spectrum(alpha=1e-3)
    return symbols, filt, budget, spectrum, design_branch(symbols, filt, budget, spectrum)


class TestConstellation:
    def test_ask_levels(self):
        assert Constellation.ask(4).levels == (-3.0, -1.0, 1.0, 3.0)

    def test_rejects_unsorted(self):
        with pytest.raises(ValueError):
            Constellation((1.0, -1.0))

    def test_index_of_rejects_foreign_symbol(self):
        with pytest.raises(ValueError, match="outside"):
            Constellation().index_of([1.0, 2.0])


class TestMappings:
    @pytest.mark.parametrize("r_in, mu, count", [(4, 2, 24), (1, 1, 2), (2, 2, 12), (2, 1, 2), (3, 2, 24)])
    def test_counts(self, r_in, mu, count):
        maps = enumerate_forward_mappings(r_in, mu)
        assert len(maps) == count == mapping_count(r_in, mu)
        assert len({m.indices for m in maps}) == count

    def test_count_formula(self):
        for r_in in range(1, 5):
            for mu in range(2, 4):
                assert mapping_count(r_in, mu) == math.comb(2**mu, r_in) * math.factorial(r_in)

    def test_too_many_levels(self):
        with pytest.raises(ValueError, match="cannot be labelled"):
            enumerate_forward_mappings(4, 1)

    def test_search_limit(self):
        with pytest.raises(ValueError, match="limit"):
            enumerate_forward_mappings(4, 4)

    def test_not_injective(self):
        with pytest.raises(ValueError, match="one-to-one"):
            ForwardMapping((0, 0), 2)

    def test_codeword_roundtrip(self):
        for m in enumerate_forward_mappings(4, 2):
            assert ForwardMapping.from_codewords(m.codewords) == m

    def test_describe(self):
        m = ForwardMapping((0, 3), 2)
        assert m.describe(BINARY) == ["-1->11", "1->00"]

    def test_codeword_set(self):
        np.testing.assert_array_equal(codeword_set(2), [[1, 1], [1, -1], [-1, 1], [-1, -1]])


class TestCodewordMatrix:
    def test_single_symbol(self):
        m = ForwardMapping((1, 0), 2)
        np.testing.assert_array_equal(build_codeword_matrix([-1.0], m, BINARY), [1, -1])

    def test_repeated_symbols_share_words(self):
        m = enumerate_forward_mappings(4, 2)[7]
        diag = build_codeword_matrix([3.0, -1.0, 3.0, 3.0], m, Constellation()).reshape(-1, 2)
        np.testing.assert_array_equal(diag[0], diag[2])
        np.testing.assert_array_equal(diag[0], diag[3])

    @settings(max_examples=30, deadline=None)
    @given(st.permutations(range(6)), st.integers(0, 23))
    def test_permutation_equivariance(self, perm, k):
        m = enumerate_forward_mappings(4, 2)[k]
        sym = Constellation().array[[0, 1, 2, 3, 2, 0]]
        diag = build_codeword_matrix(sym, m, Constellation()).reshape(-1, 2)
        permuted = build_codeword_matrix(sym[list(perm)], m, Constellation()).reshape(-1, 2)
        np.testing.assert_array_equal(permuted, diag[list(perm)])

    def test_foreign_symbol(self):
        with pytest.raises(ValueError):
            build_codeword_matrix([0.5], ForwardMapping((0, 1), 2), BINARY)


class TestAssemble:
    def test_default_dimensions(self):
        rates = RateConfig(2, 2, 50)
        filt = build_effective_filter(design_pulse("raised-cosine", 0.1, 6, 1),
                                      design_pulse("root-raised-cosine", 0.22, 6, 2), rates)
        words = build_codeword_matrix(np.ones(50), enumerate_forward_mappings(4, 2)[0], Constellation())
        prob = assemble_problem(words, filt, Budget(), Spectrum())
        assert (prob.n_q, prob.dft_size, prob.objective.size) == (100, 200, 101)
        assert prob.b_matrix.shape == (filt.interior_rows.size, 101)
        assert prob.p0 == pytest.approx(1.22 / 1.10 * 199 / 4)
        assert prob.p1 == 56

    def test_matched_rolloffs_leave_no_mask(self):
        n, p0, p1 = spectral_bins(100, 1, 0.22, 0.22)
        assert p0 == pytest.approx((n - 1) / 2)
        assert n - 2 * p1 == 0

    def test_operator_matches_fft(self):
        rng = np.random.default_rng(0)
        u = rng.standard_normal(20)
        np.testing.assert_allclose(out_of_band_operator(20, 40, 11) @ u, np.fft.fft(u, 40)[11:29], atol=1e-12)

    def test_alpha_range(self):
        for alpha in (0.0, 1.0, 1.5):
            with pytest.raises(ValueError, match="alpha"):
                Spectrum(alpha=alpha)

    def test_dft_too_short(self):
        with pytest.raises(ValueError, match="smaller"):
            spectral_bins(100, 2, 0.22, 0.1, dft_size=50)

    def test_wrong_codeword_length(self):
        filt = _raw_filter(np.eye(4), 2, 2, 2)
        with pytest.raises(ValueError, match="entries"):
            assemble_problem(np.ones(3), filt, Budget(), Spectrum())


class TestSingleMapping:
    def test_two_variable_toy_against_grid(self):
        # the spectral bound cannot bind: all four bins together hold 4 * 0.5 < 2.7
        filt = _raw_filter([[1.0, 0.4], [-0.3, 1.0]], 2, 2, 1)
        budget, spectrum = Budget(1.0, 1.0, 1), Spectrum(alpha=0.99)
        sol = solve_single_mapping(assemble_problem(np.array([1, -1]), filt, budget, spectrum))
        # gamma is positively homogeneous, so its maximum lies on the power circle
        theta = np.linspace(0, 2 * np.pi, 400001)
        u = np.sqrt(budget.branch_power) * np.stack([np.cos(theta), np.sin(theta)])
        g = np.array([[1.0, 0.4], [-0.3, 1.0]]) @ u
        grid = np.max(np.minimum(g[0], -g[1]))
        assert sol.gamma == pytest.approx(grid, abs=1e-4)
        assert sol.status == "optimal"

    def test_contradictory_rows(self):
        filt = _raw_filter([[1.0, 0.5], [1.0, 0.5]], 2, 2, 1)
        sol = solve_single_mapping(assemble_problem(np.array([1, -1]), filt, Budget(), Spectrum(alpha=0.5)))
        assert sol.gamma <= 0
        assert not sol.feasible

    def test_power_homogeneity(self, small_design):
        symbols, filt, budget, spectrum, best = small_design
        words = build_codeword_matrix(symbols, best.mapping, Constellation())
        a = solve_single_mapping(assemble_problem(words, filt, budget, spectrum))
        big = Budget(4 * budget.p0, budget.p_g, budget.n_users)
        b = solve_single_mapping(assemble_problem(words, filt, big, spectrum))
        assert b.gamma == pytest.approx(2 * a.gamma, rel=1e-6)
        np.testing.assert_allclose(b.u, 2 * a.u, atol=1e-5 * np.max(np.abs(b.u)))

    def test_sign_symmetry(self, small_design):
        symbols, filt, budget, spectrum, best = small_design
        words = build_codeword_matrix(symbols, best.mapping, Constellation())
        a = solve_single_mapping(assemble_problem(words, filt, budget, spectrum))
        b = solve_single_mapping(assemble_problem(-words, filt, budget, spectrum))
        assert b.gamma == pytest.approx(a.gamma, rel=1e-7)
        np.testing.assert_allclose(b.u, -a.u, atol=1e-6 * np.max(np.abs(a.u)))


class TestSearch:
    def test_single_symbol_toy(self):
        filt = _raw_filter(np.eye(2), 2, 2, 1)
        budget = Budget(1.0, 1.0, 1)
        sol = design_branch([1.0], filt, budget, Spectrum(alpha=0.99), BINARY)
        assert len(sol.gamma_table) == 12
        np.testing.assert_allclose(sol.gamma_table, np.sqrt(budget.branch_power / 2), rtol=1e-6)
        assert sol.mapping_index == 0

    def test_ties_keep_first_and_repeat(self):
        filt = _raw_filter(np.eye(4), 2, 2, 2)
        runs = [design_branch([-1.0, 1.0], filt, Budget(), Spectrum(alpha=0.99), BINARY) for _ in range(2)]
        assert runs[0].mapping == runs[1].mapping
        table = np.array(runs[0].gamma_table)
        assert runs[0].mapping_index == int(np.flatnonzero(table >= table.max() - 1e-7)[0])

    def test_more_users_never_help(self, small_design):
        symbols, filt, budget, spectrum, best = small_design
        crowded = design_branch(symbols, filt, Budget(budget.p0, budget.p_g, 2 * budget.n_users), spectrum)
        assert crowded.gamma <= best.gamma + 1e-9

    def test_gamma_is_table_maximum(self, small_design):
        best = small_design[-1]
        assert best.gamma == pytest.approx(max(best.gamma_table), abs=1e-7)
        assert best.gamma_table[best.mapping_index] == best.gamma
        assert len(best.statuses) == 24

    def test_certificate_and_bounds(self, small_design):
        symbols, filt, budget, spectrum, best = small_design
        assert best.gamma > 0
        rep = check_design(symbols, best, filt, budget, spectrum)
        assert rep.ok(1e-8)
        assert rep.min_margin >= best.gamma - 1e-7

    def test_block_shape_and_branches(self):
        rates = RateConfig(2, 2, 8)
        filt = build_effective_filter(design_pulse("raised-cosine", 0.1, 2, 1),
                                      design_pulse("root-raised-cosine", 0.22, 2, 2), rates, transient=1)
        rng = np.random.default_rng(2)
        symbols = Constellation().array[rng.integers(0, 4, (2, 2, 8))]
        out = design_block(symbols, filt, Budget(1.0, 1.0, 2), Spectrum(alpha=0.01))
        assert len(out) == 2 and all(len(pair) == 2 for pair in out)
        lone = design_branch(symbols[1, 0], filt, Budget(1.0, 1.0, 2), Spectrum(alpha=0.01))
        np.testing.assert_array_equal(out[1][0].u, lone.u)

    def test_block_rejects_bad_shape(self):
        with pytest.raises(ValueError, match="shape"):
            design_block(np.ones((2, 8)), _raw_filter(np.eye(16), 2, 2, 8), Budget(), Spectrum())
