import math

import numpy as np
import pytest

from crowdspeed.analytic import p_cross_given_region1
from crowdspeed.errors import AdjacencyError, ConvergenceError, DisconnectedChainError
from crowdspeed.geometry import DirectionMode
from crowdspeed.markov import (
    PositionChain,
    aggregated_chain,
    aggregated_stationary,
    build_heading_chain,
    build_position_chain,
    power_stationary,
    stationary,
    stochastic_complements,
)


class TestHeadingChain:
    def test_no_persistence_is_uniform(self, outdoor):
        chain = build_heading_chain(outdoor.motion.__class__(
            heading_persistence=0.0, theta_max=math.pi / 4, time_step=0.05,
            speed_region1=0.8, speed_region2=0.3, scenario=outdoor.motion.scenario,
        ), n_theta=8)
        assert np.allclose(chain.transition_matrix, 1 / 8)

    def test_full_persistence_is_identity(self, outdoor):
        motion = outdoor.motion.__class__(
            heading_persistence=1.0, theta_max=math.pi / 4, time_step=0.05,
            speed_region1=0.8, speed_region2=0.3, scenario=outdoor.motion.scenario,
        )
        chain = build_heading_chain(motion, n_theta=6)
        assert np.allclose(chain.transition_matrix, np.eye(6) + 0.0)

    def test_half_persistence_four_angles(self, outdoor):
        motion = outdoor.motion.__class__(
            heading_persistence=0.5, theta_max=math.pi / 4, time_step=0.05,
            speed_region1=0.8, speed_region2=0.3, scenario=outdoor.motion.scenario,
        )
        chain = build_heading_chain(motion, n_theta=4)
        m = chain.transition_matrix
        assert np.allclose(np.diag(m), 0.625)
        off = m[~np.eye(4, dtype=bool)]
        assert np.allclose(off, 0.125)

    def test_symmetric_and_stochastic(self, outdoor):
        chain = build_heading_chain(outdoor.motion, n_theta=10)
        m = chain.transition_matrix
        assert np.allclose(m, m.T)
        assert np.allclose(m.sum(axis=1), 1.0, atol=1e-12)

    def test_stationary_uniform(self, outdoor):
        chain = build_heading_chain(outdoor.motion, n_theta=12)
        pi = power_stationary(chain.transition_matrix, tol=1e-13)
        assert np.max(np.abs(pi - 1 / 12)) <= 1e-12

    def test_angle_set_structure(self, outdoor):
        chain = build_heading_chain(outdoor.motion, n_theta=8)
        assert chain.n_theta == 8
        lobe1 = chain.angles[:4]
        assert lobe1[0] == pytest.approx(-outdoor.motion.theta_max)
        assert lobe1[-1] == pytest.approx(outdoor.motion.theta_max)
        assert np.allclose(chain.angles[4:], lobe1 + math.pi)

    def test_forward_only_single_lobe(self, outdoor):
        motion = outdoor.motion.__class__(
            heading_persistence=0.9, theta_max=0.3, time_step=0.05,
            speed_region1=0.8, speed_region2=0.3, scenario=outdoor.motion.scenario,
            direction_mode=DirectionMode.FORWARD_ONLY,
        )
        chain = build_heading_chain(motion, n_theta=5)
        assert np.all(np.abs(chain.angles) <= 0.3 + 1e-12)


class TestPositionChain:
    def test_outdoor_block_structure(self, outdoor):
        chain = build_position_chain(outdoor)
        m = chain.transition_matrix
        assert np.allclose(m.sum(axis=1), 1.0, atol=1e-12)
        assert np.allclose(chain.p11, chain.p11.T)
        assert np.allclose(chain.p22, chain.p22.T)
        # coupling only between the two interface cells
        p12 = chain.p12.copy()
        assert p12[-1, 0] > 0
        p12[-1, 0] = 0
        assert not p12.any()
        p21 = chain.p21.copy()
        assert p21[0, -1] > 0
        p21[0, -1] = 0
        assert not p21.any()

    def test_adjacency_violation(self, outdoor):
        with pytest.raises(AdjacencyError):
            build_position_chain(outdoor, grid_step=0.01)  # v1*dt = 0.04

    def test_single_speed_symmetric(self, outdoor):
        cfg = outdoor.with_overrides(speed_region2=0.8, theta_max=math.pi / 2)
        chain = build_position_chain(cfg)
        m = chain.transition_matrix
        assert np.allclose(m, m.T)
        sd = stationary(chain)
        assert np.max(np.abs(sd.vector - 1 / chain.n)) <= 1e-10


class TestStationary:
    def test_equal_speeds_equal_levels(self, outdoor):
        cfg = outdoor.with_overrides(speed_region2=0.8)
        sd = stationary(build_position_chain(cfg))
        assert sd.level1 == pytest.approx(sd.level2, rel=1e-10)

    def test_outdoor_occupancy_ratio(self, outdoor):
        chain = build_position_chain(outdoor)
        sd = stationary(chain)
        ratio = sd.region1_prob / sd.region2_prob
        assert ratio == pytest.approx((0.3 * 5.5) / (0.8 * 8.8), rel=0.02)
        assert ratio == pytest.approx(0.2344, rel=0.02)

    def test_flatness(self, outdoor, indoor):
        for cfg in (outdoor, indoor):
            sd = stationary(build_position_chain(cfg))
            assert sd.flat
            assert sd.max_rel_deviation <= 1e-6

    def test_doubly_stochastic_matrix_uniform(self):
        m = np.array([[0.5, 0.3, 0.2], [0.3, 0.4, 0.3], [0.2, 0.3, 0.5]])
        pi = power_stationary(m, tol=1e-13)
        assert np.allclose(pi, 1 / 3, atol=1e-11)

    def test_nonconvergence_raises(self):
        # periodic two-state chain never settles pointwise from a biased start
        m = np.array([[0.0, 1.0], [1.0, 0.0]])
        with pytest.raises(ConvergenceError):
            power_stationary(m, tol=1e-12, max_iter=500, start=np.array([0.9, 0.1]))


class TestStochasticComplements:
    def test_hand_computed_four_state_chain(self):
        p11 = np.array([[0.7, 0.3], [0.3, 0.4]])
        p12 = np.array([[0.0, 0.0], [0.3, 0.0]])
        p21 = np.array([[0.0, 0.25], [0.0, 0.0]])
        p22 = np.array([[0.45, 0.3], [0.3, 0.7]])
        matrix = np.block([[p11, p12], [p21, p22]])
        chain = PositionChain(grid_step=1.0, n1=2, n2=2, transition_matrix=matrix)
        s11, s22 = stochastic_complements(chain)
        # worked by hand: P12 (I-P22)^-1 P21 adds 0.3 at (2,2); symmetric for S22
        assert np.allclose(s11, [[0.7, 0.3], [0.3, 0.7]], atol=1e-12)
        assert np.allclose(s22, [[0.7, 0.3], [0.3, 0.7]], atol=1e-12)

    def test_constructed_chain_complements(self, outdoor):
        chain = build_position_chain(outdoor)
        s11, s22 = stochastic_complements(chain)
        for s in (s11, s22):
            assert np.max(np.abs(s.sum(axis=1) - 1.0)) <= 1e-10
            assert np.max(np.abs(s - s.T)) <= 1e-10

    def test_disconnected_regions_reported(self):
        p11 = np.array([[0.5, 0.5], [0.5, 0.5]])
        zero = np.zeros((2, 2))
        matrix = np.block([[p11, zero], [zero, p11]])
        chain = PositionChain(grid_step=1.0, n1=2, n2=2, transition_matrix=matrix)
        with pytest.raises(DisconnectedChainError):
            stochastic_complements(chain)


class TestAggregatedChain:
    def test_single_speed_stationary_is_cell_fractions(self, outdoor):
        cfg = outdoor.with_overrides(speed_region2=0.8)
        chain = build_position_chain(cfg)
        pi = aggregated_stationary(aggregated_chain(chain))
        n = chain.n
        assert np.allclose(pi, [chain.n1 / n, chain.n2 / n], atol=1e-12)

    def test_outdoor_matches_speed_balance(self, outdoor):
        chain = build_position_chain(outdoor)
        pi = aggregated_stationary(aggregated_chain(chain))
        c1 = 0.3 * 5.5 / (0.8 * 8.8 + 0.3 * 5.5)
        assert abs(pi[0] - c1) <= 0.02
        assert abs(pi[0] - 0.1899) <= 0.02
        assert abs(pi[1] - 0.8101) <= 0.02

    def test_matches_full_chain_region_probabilities(self, outdoor, indoor):
        for cfg in (outdoor, indoor):
            chain = build_position_chain(cfg)
            sd = stationary(chain)
            pi = aggregated_stationary(aggregated_chain(chain))
            assert np.max(np.abs(pi - [sd.region1_prob, sd.region2_prob])) <= 1e-8

    def test_region_exit_rate_matches_conditional_crossing(self, outdoor):
        # aggregated 1->2 rate is half the conditional crossing probability
        chain = build_position_chain(outdoor)
        p12 = aggregated_chain(chain)[0, 1]
        lemma = p_cross_given_region1(0.8, 0.05, 5.5, math.pi / 4).per_step
        assert p12 == pytest.approx(lemma / 2, rel=0.05)
