"""Thruster allocation, PWM duty conversion and plenum coupling.

Eight solenoid thrusters form four opposed pairs. A paired thrust ``u_j``
is positive when the pair's positive thruster fires and negative when the
opposite one does. Thruster ``2 j`` is the positive member of pair ``j``
and ``2 j + 1`` the negative one.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import InertialParams, square_layout_matrices

F_NOMINAL = 1.7  # N, one thruster open alone
COUPLING = 0.125  # fractional loss per additional open thruster


class AllocationError(ValueError):
    pass


@dataclass
class ThrusterLayout:
    """Geometry of four thruster pairs.

    ``positions`` (4, 3) are the pair locations in the body frame and
    ``axes`` (4, 3) the unit directions of the force produced by each
    pair's positive thruster. The default is the 0.24 m square: pairs 0
    and 1 push along x from the edges ``y = +/-0.12``, pairs 2 and 3 along
    y from ``x = +/-0.12``.
    """

    edge: float = 0.24
    f_max: float = F_NOMINAL
    positions: np.ndarray | None = None
    axes: np.ndarray | None = None
    D: np.ndarray = field(init=False)
    L: np.ndarray = field(init=False)

    def __post_init__(self):
        if not self.f_max > 0:
            raise AllocationError("f_max must be positive")
        a = self.edge / 2.0
        if self.positions is None:
            self.positions = np.array([[0.0, a, 0.0], [0.0, -a, 0.0], [a, 0.0, 0.0], [-a, 0.0, 0.0]])
        if self.axes is None:
            self.axes = np.array([[1.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], [0, 1.0, 0]])
        self.positions = np.asarray(self.positions, dtype=float)
        self.axes = np.asarray(self.axes, dtype=float)
        if self.positions.shape != (4, 3) or self.axes.shape != (4, 3):
            raise AllocationError("need four pair positions and axes")
        norms = np.linalg.norm(self.axes, axis=1)
        if np.any(norms <= 0):
            raise AllocationError("pair axes must be nonzero")
        self.axes = self.axes / norms[:, None]
        self.D = self.axes.T.copy()
        self.L = np.cross(self.positions, self.axes).T
        if np.linalg.matrix_rank(self.alloc, tol=1e-9) < 3:
            raise AllocationError("allocation [D; L] is rank deficient (planar wrench not reachable)")
        self.pinv = np.linalg.pinv(self.alloc)
        # full eight-thruster geometry
        dirs = np.repeat(self.axes, 2, axis=0) * np.tile([1.0, -1.0], 4)[:, None]
        pos = np.repeat(self.positions, 2, axis=0)
        self.thrust_dirs = dirs.T  # (3, 8)
        self.thrust_moments = np.cross(pos, dirs).T  # (3, 8)

    @property
    def alloc(self) -> np.ndarray:
        return np.vstack((self.D, self.L))

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return [(2 * j, 2 * j + 1) for j in range(4)]

    def matches(self, params: InertialParams, tol: float = 1e-12) -> bool:
        return bool(np.allclose(self.D, params.alloc_force, atol=tol)
                    and np.allclose(self.L, params.alloc_torque, atol=tol))


def default_layout() -> ThrusterLayout:
    layout = ThrusterLayout()
    D, L = square_layout_matrices(layout.edge)
    assert np.allclose(layout.D, D) and np.allclose(layout.L, L)
    return layout


@dataclass(frozen=True)
class DutyCommand:
    """Open fractions of the eight thrusters over one control period."""

    duty: np.ndarray
    clipped: bool = False

    def __post_init__(self):
        lam = np.asarray(self.duty, dtype=float)
        if lam.shape != (8,):
            raise AllocationError("duty command needs eight entries")
        if np.any(lam < 0.0) or np.any(lam > 1.0):
            raise AllocationError("duty cycles must lie in [0, 1]")
        if np.any((lam[0::2] > 0) & (lam[1::2] > 0)):
            raise AllocationError("both thrusters of a pair are open")
        object.__setattr__(self, "duty", lam)

    def to_pairs(self, f_max: float) -> np.ndarray:
        """Inverse of :func:`pairs_to_duty` in ideal mode."""
        return f_max * (self.duty[0::2] - self.duty[1::2])


def wrench_to_pairs(f, tau, layout: ThrusterLayout) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-norm paired thrusts for a body wrench, clipped to ``f_max``.

    Returns ``(u, residual)`` with ``residual = [f; tau] - [D; L] u``.
    """
    w = np.concatenate((np.asarray(f, dtype=float).ravel(), np.asarray(tau, dtype=float).ravel()))
    if w.shape != (6,) or not np.all(np.isfinite(w)):
        raise AllocationError("wrench must be a finite 3-force and 3-torque")
    u = np.clip(layout.pinv @ w, -layout.f_max, layout.f_max)
    u[np.abs(u) < 1e-14 * layout.f_max] = 0.0  # pseudo-inverse round-off on idle pairs
    return u, w - layout.alloc @ u


def pairs_to_duty(u, f_max: float) -> DutyCommand:
    """PWM duty cycles ``lambda = |u_j| / f_max`` on the firing thruster of each pair."""
    u = np.asarray(u, dtype=float)
    if u.shape != (4,) or not np.all(np.isfinite(u)):
        raise AllocationError("need four finite paired thrusts")
    if not f_max > 0:
        raise AllocationError("f_max must be positive")
    clipped = bool(np.any(np.abs(u) > f_max))
    uc = np.clip(u, -f_max, f_max)
    lam = np.zeros(8)
    lam[0::2] = np.where(uc > 0, uc / f_max, 0.0)
    lam[1::2] = np.where(uc < 0, -uc / f_max, 0.0)
    return DutyCommand(lam, clipped)


def coupled_thrust(duty, f_nominal: float = F_NOMINAL, coupling: float = COUPLING) -> np.ndarray:
    """Window-averaged force of each thruster under plenum coupling.

    ``F_i = f_nominal * lam_i * (1 - coupling * sum_{j != i} lam_j)``.
    """
    lam = duty.duty if isinstance(duty, DutyCommand) else np.asarray(duty, dtype=float)
    if np.any(lam < 0.0) or np.any(lam > 1.0):
        raise AllocationError("duty cycles must lie in [0, 1]")
    others = lam.sum() - lam
    return f_nominal * lam * (1.0 - coupling * others)


def realized_wrench(duty, layout: ThrusterLayout, coupling: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Body force and torque produced by a duty command.

    With ``coupling`` off every thruster yields ``lam_i * f_max``.
    """
    lam = duty.duty if isinstance(duty, DutyCommand) else np.asarray(duty, dtype=float)
    if coupling:
        F = coupled_thrust(lam, layout.f_max)
    else:
        F = layout.f_max * lam
    return layout.thrust_dirs @ F, layout.thrust_moments @ F
