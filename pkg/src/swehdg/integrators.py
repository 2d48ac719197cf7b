"""Symplectic Runge-Kutta stepping for the semidiscrete wave system.

The semidiscrete dynamics is the affine linear system

    d(flux)/dt     = phi * velocity
    d(velocity)/dt = -(wave operator) flux + (rotation) velocity + forcing

where the wave operator is the condensed SPD map applied by
:class:`~swehdg.elliptic.PhiRecovery`.  Two stepper families are provided:
diagonally implicit compositions of the midpoint rule, which solve one
sparse monolithic stage system per stage, and explicit partitioned
schemes that alternate flux and velocity updates so each stage costs one
wave-operator application.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .assembly import SystemMatrices
from .elliptic import PhiRecovery

_ROWSUM_TOL = 1e-14
_SYMPLECTIC_TOL = 1e-14


@dataclass
class ButcherTableau:
    """Coefficients of a diagonally implicit Runge-Kutta scheme."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    declared_order: int
    symplectic: bool = True

    def __post_init__(self):
        self.a = np.atleast_2d(np.asarray(self.a, dtype=float))
        self.b = np.asarray(self.b, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        s = self.b.size
        if self.a.shape != (s, s) or self.c.shape != (s,):
            raise ValueError("tableau arrays have inconsistent shapes")
        if np.abs(np.triu(self.a, 1)).max(initial=0.0) != 0.0:
            raise ValueError("stage matrix must be lower triangular")
        if np.abs(self.c - self.a.sum(axis=1)).max() > _ROWSUM_TOL:
            raise ValueError("stage abscissae must equal the row sums")
        if self.symplectic and check_symplectic(self) > _SYMPLECTIC_TOL:
            raise ValueError("tableau violates the symplectic condition")

    @property
    def stages(self):
        return self.b.size


@dataclass
class PartitionedTableau:
    """Coefficients of an explicit partitioned Runge-Kutta scheme.

    The flux updates use (a, b, c) with the diagonal included; the
    velocity updates use the strictly lower (a_hat, b_hat, c_hat), so
    the stage recursion never needs an implicit solve.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    a_hat: np.ndarray
    b_hat: np.ndarray
    c_hat: np.ndarray
    declared_order: int
    symplectic: bool = True

    def __post_init__(self):
        self.a = np.atleast_2d(np.asarray(self.a, dtype=float))
        self.b = np.asarray(self.b, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        self.a_hat = np.atleast_2d(np.asarray(self.a_hat, dtype=float))
        self.b_hat = np.asarray(self.b_hat, dtype=float)
        self.c_hat = np.asarray(self.c_hat, dtype=float)
        s = self.b.size
        shapes_ok = (self.a.shape == (s, s) and self.a_hat.shape == (s, s)
                     and self.b_hat.shape == (s,) and self.c.shape == (s,)
                     and self.c_hat.shape == (s,))
        if not shapes_ok:
            raise ValueError("tableau arrays have inconsistent shapes")
        if np.abs(np.triu(self.a, 1)).max(initial=0.0) != 0.0:
            raise ValueError("flux stage matrix must be lower triangular")
        if np.abs(np.triu(self.a_hat, 0)).max(initial=0.0) != 0.0:
            raise ValueError("velocity stage matrix must be strictly lower")
        if np.abs(self.c - self.a.sum(axis=1)).max() > _ROWSUM_TOL:
            raise ValueError("stage abscissae must equal the row sums")
        if np.abs(self.c_hat - self.a_hat.sum(axis=1)).max() > _ROWSUM_TOL:
            raise ValueError("stage abscissae must equal the row sums")
        if self.symplectic and check_symplectic(self) > _SYMPLECTIC_TOL:
            raise ValueError("tableau violates the symplectic condition")

    @property
    def stages(self):
        return self.b.size


def check_symplectic(tableau):
    """Residual of the algebraic condition for exact preservation of the
    canonical two-form by the scheme; returns the max over stage pairs."""
    b = tableau.b
    if isinstance(tableau, PartitionedTableau):
        bh = tableau.b_hat
        res = (b[:, None] * tableau.a_hat + bh[None, :] * tableau.a.T
               - np.outer(b, bh))
    else:
        res = b[:, None] * tableau.a + b[None, :] * tableau.a.T - np.outer(b, b)
    return float(np.abs(res).max())


def make_sdirk(order):
    """Diagonally implicit symplectic tableau of the given order.

    Order 2 is the implicit midpoint rule; order 4 composes three
    midpoint substeps with triple-jump weights.  Both satisfy the
    symplectic condition identically.
    """
    if order == 2:
        b = np.array([1.0])
    elif order == 4:
        gamma = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
        b = np.array([gamma, 1.0 - 2.0 * gamma, gamma])
    else:
        raise ValueError(f"unsupported implicit order {order}; use 2 or 4")
    s = b.size
    a = np.tril(np.tile(b, (s, 1)), -1) + 0.5 * np.diag(b)
    return ButcherTableau(a=a, b=b, c=a.sum(axis=1), declared_order=order)


# substep fractions of leapfrog compositions; each list of fractions g
# yields flux weights (g1/2, (g1+g2)/2, ..., gM/2) and velocity weights
# (g1, ..., gM, 0)
_Y1 = -1.17767998417887
_Y2 = 0.235573213359357
_Y3 = 0.784513610477560
_LEAPFROG_FRACTIONS = {
    2: [1.0],
    4: None,  # filled below from the cube-root weight
    6: [_Y3, _Y2, _Y1, 1.0 - 2.0 * (_Y1 + _Y2 + _Y3), _Y1, _Y2, _Y3],
}
_THETA = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
_LEAPFROG_FRACTIONS[4] = [_THETA, 1.0 - 2.0 * _THETA, _THETA]


def _weights_from_fractions(fractions):
    g = np.asarray(fractions, dtype=float)
    b = np.empty(g.size + 1)
    b[0] = 0.5 * g[0]
    b[1:-1] = 0.5 * (g[:-1] + g[1:])
    b[-1] = 0.5 * g[-1]
    bh = np.concatenate([g, [0.0]])
    return b, bh


def make_seprk(order):
    """Explicit partitioned symplectic tableau of the given order.

    Orders 2, 4 and 6 are leapfrog compositions; order 1 is the
    one-stage flux-first splitting and order 3 the classical three-stage
    scheme with flux weights (7/24, 3/4, -1/24).
    """
    if order == 1:
        b = np.array([1.0])
        bh = np.array([1.0])
    elif order == 3:
        b = np.array([7.0 / 24.0, 3.0 / 4.0, -1.0 / 24.0])
        bh = np.array([2.0 / 3.0, -2.0 / 3.0, 1.0])
    elif order in _LEAPFROG_FRACTIONS:
        b, bh = _weights_from_fractions(_LEAPFROG_FRACTIONS[order])
    else:
        raise ValueError(
            f"unsupported explicit order {order}; use 1, 2, 3, 4 or 6")
    s = b.size
    a = np.tril(np.tile(b, (s, 1)))
    a_hat = np.tril(np.tile(bh, (s, 1)), -1)
    return PartitionedTableau(a=a, b=b, c=a.sum(axis=1),
                              a_hat=a_hat, b_hat=bh, c_hat=a_hat.sum(axis=1),
                              declared_order=order)


@dataclass
class SemidiscreteSystem:
    """Affine right-hand side for the state y = [flux; velocity]."""

    matrices: SystemMatrices
    recovery: PhiRecovery
    forcing: np.ndarray | None = None

    def __post_init__(self):
        nv = self.matrices.div_pair.shape[0]
        if self.forcing is None:
            self.forcing = np.zeros(nv)
        self.forcing = np.asarray(self.forcing, dtype=float)
        if self.forcing.shape != (nv,):
            raise ValueError("forcing length does not match the velocity space")

    @property
    def nv(self):
        return self.matrices.div_pair.shape[0]

    @property
    def phi(self):
        return self.matrices.params.phi

    def split(self, y):
        nv = self.nv
        return y[:nv], y[nv:]

    def join(self, w, u):
        return np.concatenate([w, u])

    def flux_slope(self, u):
        return self.phi * u

    def velocity_slope(self, w, u):
        return self.matrices.coriolis @ u + self.forcing - self.recovery.apply(w)

    def rhs(self, y):
        w, u = self.split(y)
        return np.concatenate([self.flux_slope(u), self.velocity_slope(w, u)])


class SdirkIntegrator:
    """Fixed-step diagonally implicit stepper.

    Each stage solves one sparse monolithic system in the flux, velocity,
    height and trace unknowns, so the wave operator stays factored and is
    never formed densely.  One factorization per distinct diagonal entry
    of the tableau is computed up front and reused for every step.
    """

    def __init__(self, system, tableau, dt):
        self.system = system
        self.tableau = tableau
        self.dt = float(dt)
        self._solvers = {}
        for aii in tableau.a.diagonal():
            delta = self.dt * aii
            if delta not in self._solvers:
                self._solvers[delta] = self._factorize(delta)

    def _factorize(self, delta):
        m = self.system.matrices
        nv = self.system.nv
        eye_v = sparse.identity(nv, format="csr")
        eye_w = sparse.identity(m.stab_local.shape[0], format="csr")
        block = sparse.bmat([
            [eye_v, -delta * self.system.phi * eye_v, None, None],
            [None, eye_v - delta * m.coriolis,
             -delta * m.div_pair, delta * m.flux_pair],
            [m.div_pair.T, None, eye_w + m.stab_local, -m.stab_mixed],
            [-m.flux_pair.T, None, -m.stab_mixed.T, m.stab_trace],
        ], format="csc")
        try:
            return splu(block)
        except RuntimeError as exc:
            raise RuntimeError(
                f"stage factorization failed for stage scale {delta}") from exc

    def step(self, y):
        sysm = self.system
        m = sysm.matrices
        tab = self.tableau
        dt = self.dt
        nv = sysm.nv
        nw = m.stab_local.shape[0]
        slopes = np.empty((tab.stages, 2 * nv))
        for i in range(tab.stages):
            acc = y + dt * (tab.a[i, :i] @ slopes[:i])
            delta = dt * tab.a[i, i]
            rhs = np.concatenate([
                acc[:nv],
                acc[nv:] + delta * sysm.forcing,
                np.zeros(nw),
                np.zeros(m.stab_trace.shape[0]),
            ])
            x = self._solvers[delta].solve(rhs)
            w_i = x[:nv]
            u_i = x[nv:2 * nv]
            p_i = x[2 * nv:2 * nv + nw]
            phat_i = x[2 * nv + nw:]
            slopes[i, :nv] = sysm.phi * u_i
            slopes[i, nv:] = (m.div_pair @ p_i - m.flux_pair @ phat_i
                              + m.coriolis @ u_i + sysm.forcing)
        return y + dt * (tab.b @ slopes)


class SeprkIntegrator:
    """Fixed-step explicit partitioned stepper.

    The stage recursion alternates flux slopes (phi times the staged
    velocity) and velocity slopes (wave operator on the staged flux plus
    rotation and forcing); every stage costs one condensed SPD solve.

    The rotation term is evaluated explicitly at the staged velocity, so
    the composition retains its declared order only when rotation is
    absent (with rotation it drops to first order); rotating problems
    should use the implicit steppers.
    """

    def __init__(self, system, tableau, dt):
        self.system = system
        self.tableau = tableau
        self.dt = float(dt)

    def step(self, y):
        sysm = self.system
        tab = self.tableau
        dt = self.dt
        w0, u0 = sysm.split(y)
        flux_slopes = np.empty((tab.stages, w0.size))
        vel_slopes = np.empty((tab.stages, w0.size))
        for i in range(tab.stages):
            u_stage = u0 + dt * (tab.a_hat[i, :i] @ vel_slopes[:i])
            flux_slopes[i] = sysm.phi * u_stage
            w_stage = w0 + dt * (tab.a[i, :i + 1] @ flux_slopes[:i + 1])
            vel_slopes[i] = sysm.velocity_slope(w_stage, u_stage)
        w1 = w0 + dt * (tab.b @ flux_slopes)
        u1 = u0 + dt * (tab.b_hat @ vel_slopes)
        return np.concatenate([w1, u1])


def sdirk_step(system, tableau, dt, y):
    """Single implicit step; build an SdirkIntegrator to reuse the
    stage factorizations across many steps."""
    return SdirkIntegrator(system, tableau, dt).step(y)


def seprk_step(system, tableau, dt, y):
    """Single explicit partitioned step."""
    return SeprkIntegrator(system, tableau, dt).step(y)


_IMPLICIT_NAMES = {"midpoint": 2, "sdirk2": 2, "sdirk4": 4}


def make_integrator(name, system, dt):
    """Stepper factory keyed by the scheme names used in config files:
    midpoint, sdirk2, sdirk4, or seprkN with N in {1, 2, 3, 4, 6}."""
    key = name.strip().lower()
    if key in _IMPLICIT_NAMES:
        return SdirkIntegrator(system, make_sdirk(_IMPLICIT_NAMES[key]), dt)
    if key.startswith("seprk"):
        try:
            order = int(key[len("seprk"):])
        except ValueError:
            raise ValueError(f"unknown integrator {name!r}") from None
        return SeprkIntegrator(system, make_seprk(order), dt)
    raise ValueError(f"unknown integrator {name!r}")
