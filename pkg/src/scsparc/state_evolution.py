"""Asymptotic (M -> infinity) state evolution for a base matrix.

In this limit the per-column MSE indicator is binary: column c is decoded at
iteration t+1 exactly when ``sum_r W_rc / phi_r^t`` strictly exceeds
``2 * R * L_R``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .base_matrix import BaseMatrix
from .exceptions import AsymmetricTrajectory, DimensionMismatch


@dataclass(frozen=True)
class SeState:
    iteration: int
    phi: np.ndarray
    psi: np.ndarray


@dataclass(frozen=True)
class SeTrajectory:
    states: list[SeState]
    success: bool
    success_iteration: int | None = None
    fixed_point: bool = False
    theta: int = field(default=0, repr=False)

    @property
    def final_psi(self) -> np.ndarray:
        return self.states[-1].psi

    def to_csv(self, path_or_file) -> None:
        l_c = len(self.states[0].psi)
        l_r = len(self.states[0].phi)
        header = ["t"] + [f"psi_{c + 1}" for c in range(l_c)] + [f"phi_{r + 1}" for r in range(l_r)]
        rows = [
            [s.iteration] + [int(v) for v in s.psi] + [repr(float(v)) for v in s.phi]
            for s in self.states
        ]
        if hasattr(path_or_file, "write"):
            _write_rows(path_or_file, header, rows)
        else:
            with open(path_or_file, "w", newline="") as fh:
                _write_rows(fh, header, rows)


def _write_rows(fh, header, rows):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)


def _phi(w: np.ndarray, psi: np.ndarray, sigma2: float) -> np.ndarray:
    return sigma2 + (w @ psi) / w.shape[1]


def se_step(b: BaseMatrix, psi, sigma2: float, rate: float):
    """One SE update; returns ``(phi^t, psi^{t+1})``.

    Ties (statistic exactly equal to the threshold) count as not decoded.
    """
    w = b.entries
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (w.shape[1],):
        raise DimensionMismatch(f"psi has shape {psi.shape}, expected ({w.shape[1]},)")
    phi = _phi(w, psi, sigma2)
    stat = (w.T @ (1.0 / phi)) / (rate * w.shape[0])
    psi_next = np.where(stat > 2.0, 0.0, 1.0)
    return phi, psi_next


def column_statistics(b: BaseMatrix, psi, sigma2: float) -> np.ndarray:
    """``sum_r W_rc / phi_r`` per column (compare against ``2 R L_R``)."""
    w = b.entries
    phi = _phi(w, np.asarray(psi, dtype=float), sigma2)
    return w.T @ (1.0 / phi)


def se_run(b: BaseMatrix, sigma2: float, rate: float, max_iter: int | None = None) -> SeTrajectory:
    l_c = b.entries.shape[1]
    if max_iter is None:
        max_iter = l_c + 1
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    psi = np.ones(l_c)
    phi = _phi(b.entries, psi, sigma2)
    states = [SeState(0, phi, psi)]
    fixed = False
    for t in range(1, max_iter + 1):
        _, psi_next = se_step(b, psi, sigma2, rate)
        phi_next = _phi(b.entries, psi_next, sigma2)
        states.append(SeState(t, phi_next, psi_next))
        if not psi_next.any():
            return SeTrajectory(states, True, t, theta=b.ctx.theta)
        if np.array_equal(psi_next, psi):
            fixed = True
            break
        psi = psi_next
    return SeTrajectory(states, False, None, fixed_point=fixed, theta=b.ctx.theta)


def decoded_prefix(psi: np.ndarray, theta: int) -> int:
    """Largest c <= theta with psi_1..psi_c all zero."""
    undecoded = np.flatnonzero(psi[:theta] != 0)
    return int(undecoded[0]) if undecoded.size else theta


def wave_summary(traj: SeTrajectory):
    """Return ``(g, prefixes)`` for iterations t = 1, 2, ...

    ``g`` is the decoded prefix after the first iteration; prefixes are
    capped at the middle column since symmetric decoding meets there.
    """
    theta = traj.theta
    for s in traj.states:
        if not np.array_equal(s.psi, s.psi[::-1]):
            raise AsymmetricTrajectory(f"psi is not symmetric at iteration {s.iteration}")
    prefixes = [decoded_prefix(s.psi, theta) for s in traj.states[1:]]
    g = prefixes[0] if prefixes else 0
    return g, prefixes
