"""Discretized Markov chains for the x-position and heading of one walker.

This module is the brute-force oracle for the closed-area occupancy
results: it builds the heading and position transition matrices
explicitly, computes stationary vectors, stochastic complements, and the
2x2 region-aggregated chain, so the closed-form constants can be checked
against plain linear algebra.

Discretization: x-cells are centered at (i + 1/2)*grid_step with the
region boundary on a cell edge.  A one-step displacement d is assigned to
the two nearest cells in proportion to proximity (a displacement of tau
cells moves the walker one cell in sign(tau) with probability |tau|).
This keeps within-region blocks symmetric, makes the interface blocks
single-entry, and preserves the mean displacement exactly; plain
nearest-cell rounding would freeze the slow region whenever
v_slow*dt < grid_step/2.  Off-grid moves at the outer walls mirror back
into the boundary cell.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AdjacencyError, ConvergenceError, DisconnectedChainError
from .geometry import DirectionMode, MotionParams, ScenarioConfig

__all__ = [
    "HeadingChain",
    "PositionChain",
    "StationaryDistribution",
    "build_heading_chain",
    "build_position_chain",
    "stationary",
    "power_stationary",
    "stochastic_complements",
    "aggregated_chain",
    "aggregated_stationary",
    "write_matrix_text",
]

FLATNESS_TOL = 1e-6


@dataclass(frozen=True)
class HeadingChain:
    """Discrete heading set and its row-stochastic transition matrix."""

    angles: np.ndarray
    transition_matrix: np.ndarray

    @property
    def n_theta(self) -> int:
        return len(self.angles)


@dataclass(frozen=True)
class PositionChain:
    """Two-region x-position chain partitioned into region blocks."""

    grid_step: float
    n1: int
    n2: int
    transition_matrix: np.ndarray

    @property
    def n(self) -> int:
        return self.n1 + self.n2

    @property
    def p11(self) -> np.ndarray:
        return self.transition_matrix[: self.n1, : self.n1]

    @property
    def p12(self) -> np.ndarray:
        return self.transition_matrix[: self.n1, self.n1 :]

    @property
    def p21(self) -> np.ndarray:
        return self.transition_matrix[self.n1 :, : self.n1]

    @property
    def p22(self) -> np.ndarray:
        return self.transition_matrix[self.n1 :, self.n1 :]


@dataclass(frozen=True)
class StationaryDistribution:
    """Stationary vector with its per-region structure read off.

    ``level1``/``level2`` are the per-cell means inside each region;
    ``region1_prob``/``region2_prob`` the summed occupancy probabilities.
    ``max_rel_deviation`` is the worst in-region deviation from the level,
    relative to the level; ``flat`` flags whether it stays below 1e-6.
    """

    vector: np.ndarray
    level1: float
    level2: float
    region1_prob: float
    region2_prob: float
    max_rel_deviation: float

    @property
    def flat(self) -> bool:
        return self.max_rel_deviation <= FLATNESS_TOL


def heading_angles(theta_max: float, n_theta: int, mode: DirectionMode) -> np.ndarray:
    """Uniformly spaced heading set: two lobes around 0 and pi, or one lobe."""
    if n_theta < 2:
        raise ValueError("n_theta must be >= 2")
    if mode is DirectionMode.BIDIRECTIONAL:
        if n_theta % 2:
            raise ValueError("bidirectional heading set needs an even n_theta")
        half = n_theta // 2
        lobe = np.linspace(-theta_max, theta_max, half)
        return np.concatenate([lobe, lobe + np.pi])
    return np.linspace(-theta_max, theta_max, n_theta)


def build_heading_chain(motion: MotionParams, n_theta: int) -> HeadingChain:
    """Heading chain: keep with probability p, else uniform over the set."""
    angles = heading_angles(motion.theta_max, n_theta, motion.direction_mode)
    p = motion.heading_persistence
    matrix = np.full((n_theta, n_theta), (1.0 - p) / n_theta)
    matrix[np.diag_indices(n_theta)] += p
    return HeadingChain(angles=angles, transition_matrix=matrix)


def build_position_chain(
    config: ScenarioConfig, grid_step: float | None = None, n_theta: int = 64
) -> PositionChain:
    """Build the x-position chain of the closed (bidirectional) model.

    Parameters
    ----------
    config : ScenarioConfig
        Supplies geometry, speeds, time step and theta_max.
    grid_step : float, optional
        Cell width; defaults to max(v1, v2)*dt, the coarsest grid with
        one-cell moves.  Must be >= v*dt in both regions.
    n_theta : int
        Size of the discrete heading set used for the transition weights.
    """
    motion = config.motion
    geom = config.geometry
    dt = motion.time_step
    v1, v2 = motion.speed_region1, motion.speed_region2
    if grid_step is None:
        grid_step = max(v1, v2) * dt
    for label, v in (("region 1", v1), ("region 2", v2)):
        if v * dt > grid_step * (1 + 1e-12):
            raise AdjacencyError(
                f"grid_step={grid_step} < v*dt={v * dt} in {label}; "
                "one-cell adjacency requires grid_step >= v*dt"
            )

    n1 = int(round(geom.region1_width / grid_step))
    n2 = int(round(geom.region2_width / grid_step))
    if n1 < 2 or n2 < 2:
        raise AdjacencyError(
            f"grid too coarse: {n1} + {n2} cells; need at least 2 per region"
        )

    angles = heading_angles(motion.theta_max, n_theta, DirectionMode.BIDIRECTIONAL)
    # Mean positive displacement in cell units; equals the mean negative one
    # by lobe symmetry, so each cell steps up or down with the same weight.
    mean_pos_cos = float(np.maximum(np.cos(angles), 0.0).mean())
    hop = {1: v1 * dt / grid_step * mean_pos_cos, 2: v2 * dt / grid_step * mean_pos_cos}

    n = n1 + n2
    matrix = np.zeros((n, n))
    for i in range(n):
        h = hop[1] if i < n1 else hop[2]
        matrix[i, i] = 1.0 - 2.0 * h
        if i > 0:
            matrix[i, i - 1] = h
        else:
            matrix[i, i] += h  # mirrored off the left wall
        if i < n - 1:
            matrix[i, i + 1] = h
        else:
            matrix[i, i] += h  # mirrored off the right wall
    return PositionChain(grid_step=grid_step, n1=n1, n2=n2, transition_matrix=matrix)


def _tridiagonal(matrix: np.ndarray) -> bool:
    mask = np.tri(len(matrix), k=1) * np.tri(len(matrix), k=1).T
    return bool(np.all(matrix[mask == 0] == 0.0))


def _detailed_balance_start(matrix: np.ndarray) -> np.ndarray:
    # Birth-death warm start: gamma_{i+1}/gamma_i = P[i,i+1]/P[i+1,i].
    up = np.diag(matrix, k=1)
    down = np.diag(matrix, k=-1)
    if np.any(up <= 0.0) or np.any(down <= 0.0):
        raise ConvergenceError("position chain is not irreducible (zero coupling)")
    log_gamma = np.concatenate([[0.0], np.cumsum(np.log(up) - np.log(down))])
    gamma = np.exp(log_gamma - log_gamma.max())
    return gamma / gamma.sum()


def power_stationary(
    matrix: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 200_000,
    start: np.ndarray | None = None,
) -> np.ndarray:
    """Left-eigenvector power iteration: v <- vP until max|vP - v| <= tol."""
    n = len(matrix)
    v = np.full(n, 1.0 / n) if start is None else start / start.sum()
    for _ in range(max_iter):
        nxt = v @ matrix
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - v)) <= tol:
            return nxt
        v = nxt
    raise ConvergenceError(
        f"power iteration did not reach residual {tol} in {max_iter} steps "
        "(chain may be reducible or periodic)"
    )


def stationary(
    chain: PositionChain, tol: float = 1e-10, max_iter: int = 200_000
) -> StationaryDistribution:
    """Stationary distribution of a position chain, with region structure.

    Tridiagonal chains are warm-started from the detailed-balance solution
    (they are birth-death, hence reversible); the power iteration then
    verifies the fixed point against the matrix at the requested residual.
    """
    matrix = chain.transition_matrix
    start = _detailed_balance_start(matrix) if _tridiagonal(matrix) else None
    vector = power_stationary(matrix, tol=tol, max_iter=max_iter, start=start)

    g1 = vector[: chain.n1]
    g2 = vector[chain.n1 :]
    level1 = float(g1.mean())
    level2 = float(g2.mean())
    dev = 0.0
    for level, part in ((level1, g1), (level2, g2)):
        if level > 0:
            dev = max(dev, float(np.max(np.abs(part - level)) / level))
    return StationaryDistribution(
        vector=vector,
        level1=level1,
        level2=level2,
        region1_prob=float(g1.sum()),
        region2_prob=float(g2.sum()),
        max_rel_deviation=dev,
    )


def stochastic_complements(chain: PositionChain) -> tuple[np.ndarray, np.ndarray]:
    """Stochastic complements S11, S22 of the partitioned position chain.

    S11 = P11 + P12 (I - P22)^-1 P21 and symmetrically for S22.  Raises
    DisconnectedChainError when the coupling blocks are all zero; a
    singular (I - Pii) propagates as numpy's LinAlgError.
    """
    if not chain.p12.any() or not chain.p21.any():
        raise DisconnectedChainError("regions are decoupled: P12 or P21 is identically zero")
    i2 = np.eye(chain.n2)
    i1 = np.eye(chain.n1)
    s11 = chain.p11 + chain.p12 @ np.linalg.solve(i2 - chain.p22, chain.p21)
    s22 = chain.p22 + chain.p21 @ np.linalg.solve(i1 - chain.p11, chain.p12)
    return s11, s22


def aggregated_chain(chain: PositionChain) -> np.ndarray:
    """2x2 region chain: entry (i, j) is the block sum of Pij over N_i."""
    blocks = [
        [chain.p11, chain.p12],
        [chain.p21, chain.p22],
    ]
    sizes = (chain.n1, chain.n2)
    out = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            out[i, j] = blocks[i][j].sum() / sizes[i]
    return out


def aggregated_stationary(p2: np.ndarray) -> np.ndarray:
    """Closed-form stationary vector of a 2x2 row-stochastic matrix."""
    p12, p21 = p2[0, 1], p2[1, 0]
    total = p12 + p21
    if total == 0.0:
        raise DisconnectedChainError("2x2 chain has no coupling between states")
    return np.array([p21 / total, p12 / total])


def write_matrix_text(path: str | Path, matrix: np.ndarray, fmt: str = "dense") -> None:
    """Dump a matrix as plain text, dense rows or (i, j, value) triplets."""
    path = Path(path)
    if fmt == "dense":
        np.savetxt(path, matrix, fmt="%.17g")
    elif fmt == "triplet":
        rows, cols = np.nonzero(matrix)
        with path.open("w", encoding="utf-8") as fh:
            for i, j in zip(rows, cols):
                fh.write(f"{i} {j} {matrix[i, j]:.17g}\n")
    else:
        raise ValueError(f"unknown matrix dump format '{fmt}'")
