"""Problem presets and runnable systems for both scheme variants.

A problem binds a mesh, physical parameters, initial data, and an
optional bathymetry profile.  Two semidiscrete systems can be built from
it: the energy-conserving flux scheme stepped by the symplectic
integrators, and the dissipative height scheme whose stages solve a
monolithic (height, velocity, trace) system.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .assembly import PhysicalParams, assemble_all, assemble_bathymetry_load
from .elliptic import InitState, PhiRecovery, initialize_state
from .fespace import SpaceSet, build_spaces
from .integrators import SemidiscreteSystem
from .mesh import Mesh

_SQRT2 = np.sqrt(2.0)


class ManufacturedSolution:
    """Closed-form standing wave on the unit square: a separable cosine
    height profile oscillating at the fundamental wall-mode frequency,
    with matching velocity and flux fields."""

    frequency = _SQRT2 * np.pi

    def phi(self, x, y, t):
        return np.cos(np.pi * x) * np.cos(np.pi * y) * np.cos(self.frequency * t)

    def grad_phi(self, x, y, t):
        factor = np.pi * np.cos(self.frequency * t)
        return (-factor * np.sin(np.pi * x) * np.cos(np.pi * y),
                -factor * np.cos(np.pi * x) * np.sin(np.pi * y))

    def u(self, x, y, t):
        factor = np.sin(self.frequency * t) / _SQRT2
        return (factor * np.sin(np.pi * x) * np.cos(np.pi * y),
                factor * np.cos(np.pi * x) * np.sin(np.pi * y))

    def w(self, x, y, t):
        factor = -np.cos(self.frequency * t) / (2.0 * np.pi)
        return (factor * np.sin(np.pi * x) * np.cos(np.pi * y),
                factor * np.cos(np.pi * x) * np.sin(np.pi * y))

    def phi_at(self, t):
        return lambda x, y: self.phi(x, y, t)

    def grad_phi_at(self, t):
        return lambda x, y: self.grad_phi(x, y, t)

    def u_at(self, t):
        return lambda x, y: self.u(x, y, t)

    def w_at(self, t):
        return lambda x, y: self.w(x, y, t)


@dataclass
class ExactFields:
    """Projected coefficients of the closed-form fields at one time."""
    phi: np.ndarray
    u: np.ndarray
    w: np.ndarray


def exact_state(solution, spaces, t):
    """L2 projections of the closed-form height, velocity, and flux."""
    return ExactFields(
        phi=spaces.scalar.project(solution.phi_at(t)).coeffs,
        u=spaces.vector.project(solution.u_at(t)).coeffs,
        w=spaces.vector.project(solution.w_at(t)).coeffs)


def _bump(x):
    return np.exp(-0.5 * (x + 5.0) ** 2)


def _moving_bump_phi(x, y):
    return 1.0 + _bump(x) + 0.0 * y


def _moving_bump_grad(x, y):
    return -(x + 5.0) * _bump(x) + 0.0 * y, 0.0 * y


def _moving_bump_u(x, y):
    return _bump(x) + 0.0 * y, 0.0 * y


def _pulse_phi(x, y):
    return 10.0 * np.exp(-2.0 * y ** 2) * np.exp(-2.0 * (x + 5.0) ** 2)


def _pulse_grad(x, y):
    p = _pulse_phi(x, y)
    return -4.0 * (x + 5.0) * p, -4.0 * y * p


def _mound(a, b):
    return np.exp(-2.0 * a ** 2) * np.exp(-2.0 * b ** 2)


def _shelf_bathymetry(x, y):
    # flat shelf with three mounds, active only on the x >= 0 half; the
    # jump at x = 0 is intended and should align with mesh lines
    mounds = _mound(x - 5.0, y) + _mound(x - 5.0, y - 3.0) + _mound(x - 5.0, y + 3.0)
    return np.where(x >= 0.0, -1.1 + 0.6 * mounds, 0.0)


def _shelf_bathymetry_grad(x, y):
    gx = -4.0 * (x - 5.0) * (_mound(x - 5.0, y) + _mound(x - 5.0, y - 3.0)
                             + _mound(x - 5.0, y + 3.0))
    gy = -4.0 * (y * _mound(x - 5.0, y) + (y - 3.0) * _mound(x - 5.0, y - 3.0)
                 + (y + 3.0) * _mound(x - 5.0, y + 3.0))
    active = x >= 0.0
    return np.where(active, 0.6 * gx, 0.0), np.where(active, 0.6 * gy, 0.0)


@dataclass(frozen=True)
class Preset:
    """Named initial data plus the physical parameters it assumes."""
    name: str
    params: PhysicalParams
    phi0: object = None
    u0: object = None
    grad_phi0: object = None
    bathymetry: object = None
    grad_bathymetry: object = None
    manufactured: ManufacturedSolution = None


def get_preset(name):
    """Problem presets: standing_wave (unit square, closed form),
    moving_bump (periodic box with a wall column), gaussian_pulse
    (channel with a mounded shelf)."""
    key = name.strip().lower()
    if key == "standing_wave":
        ms = ManufacturedSolution()
        return Preset(name=key, params=PhysicalParams(),
                      phi0=ms.phi_at(0.0), u0=ms.u_at(0.0),
                      grad_phi0=ms.grad_phi_at(0.0), manufactured=ms)
    if key == "moving_bump":
        return Preset(name=key, params=PhysicalParams(f0=0.5),
                      phi0=_moving_bump_phi, u0=_moving_bump_u,
                      grad_phi0=_moving_bump_grad)
    if key == "gaussian_pulse":
        return Preset(name=key, params=PhysicalParams(f0=0.1),
                      phi0=_pulse_phi, u0=None, grad_phi0=_pulse_grad,
                      bathymetry=_shelf_bathymetry,
                      grad_bathymetry=_shelf_bathymetry_grad)
    raise ValueError(f"unknown preset {name!r}")


@dataclass
class ProblemSpec:
    """Everything needed to build and run one problem."""
    mesh: Mesh
    degree: int
    params: PhysicalParams
    phi0: object = None
    u0: object = None
    grad_phi0: object = None
    bathymetry: object = None
    grad_bathymetry: object = None
    manufactured: ManufacturedSolution = None
    final_time: float = 0.0
    dt: float = 0.0
    integrator: str = "midpoint"


def make_problem(preset_name, mesh, degree, final_time=0.0, dt=0.0,
                 integrator="midpoint", **param_overrides):
    """ProblemSpec from a preset, with optional parameter overrides
    (tau=..., alpha=..., f0=..., and so on)."""
    preset = get_preset(preset_name)
    params = replace(preset.params, **param_overrides) if param_overrides \
        else preset.params
    return ProblemSpec(mesh=mesh, degree=degree, params=params,
                       phi0=preset.phi0, u0=preset.u0,
                       grad_phi0=preset.grad_phi0,
                       bathymetry=preset.bathymetry,
                       grad_bathymetry=preset.grad_bathymetry,
                       manufactured=preset.manufactured,
                       final_time=final_time, dt=dt, integrator=integrator)


def step_count(final_time, dt):
    """Step count landing exactly on the final time; the matching step
    is returned alongside (a near-multiple rescales dt imperceptibly)."""
    if final_time <= 0.0 or dt <= 0.0:
        return 0, dt
    n = max(1, int(round(final_time / dt)))
    return n, final_time / n


@dataclass
class UwRun:
    """Runnable flux-scheme problem: system plus initial coefficients."""
    spec: ProblemSpec
    spaces: SpaceSet
    system: SemidiscreteSystem
    y0: np.ndarray
    init: InitState
    bathymetry_coeffs: np.ndarray = None

    @property
    def matrices(self):
        return self.system.matrices

    @property
    def recovery(self):
        return self.system.recovery

    @property
    def mesh(self):
        return self.spec.mesh


def hamiltonian_load(recovery, bath_coeffs):
    """Velocity forcing induced by a bathymetry profile through the same
    condensation chain as the wave operator, so the stepped system stays
    exactly Hamiltonian at the discrete level."""
    mats = recovery.mats
    a, b = recovery.solve_saddle(bath_coeffs,
                                 np.zeros(mats.stab_trace.shape[0]))
    return mats.div_pair @ a - mats.flux_pair @ b


def build_uw_system(spec, spaces=None, matrices=None):
    """Assemble the operators and initial state of the conserving scheme."""
    if spaces is None:
        spaces = build_spaces(spec.mesh, spec.degree, tangential=True)
    if matrices is None:
        matrices = assemble_all(spec.mesh, spaces, spec.params)
    state = initialize_state(spec.mesh, spaces, spec.phi0, spec.u0,
                             spec.params, grad_phi0=spec.grad_phi0,
                             matrices=matrices)
    recovery = PhiRecovery(matrices)
    bath = None
    forcing = None
    if spec.bathymetry is not None:
        bath = spaces.scalar.project(spec.bathymetry).coeffs
        forcing = hamiltonian_load(recovery, bath)
    system = SemidiscreteSystem(matrices=matrices, recovery=recovery,
                                forcing=forcing)
    y0 = np.concatenate([state.w.coeffs, state.u.coeffs])
    return UwRun(spec=spec, spaces=spaces, system=system, y0=y0,
                 init=state, bathymetry_coeffs=bath)


@dataclass
class PhiuRun:
    """Runnable dissipative-scheme problem (primal height unknown)."""
    spec: ProblemSpec
    spaces: SpaceSet
    matrices: object
    forcing: np.ndarray
    y0: np.ndarray

    @property
    def mesh(self):
        return self.spec.mesh


def build_phiu_system(spec, spaces=None, matrices=None):
    """Assemble the dissipative height scheme; the state is the pair of
    height and velocity coefficients, initialized by direct projection."""
    if spaces is None:
        spaces = build_spaces(spec.mesh, spec.degree)
    if matrices is None:
        matrices = assemble_all(spec.mesh, spaces, spec.params)
    nw = spaces.scalar.ndof
    nv = spaces.vector.ndof
    q0 = spaces.scalar.project(spec.phi0).coeffs if spec.phi0 is not None \
        else np.zeros(nw)
    u0 = spaces.vector.project(spec.u0).coeffs if spec.u0 is not None \
        else np.zeros(nv)
    forcing = np.zeros(nv)
    if spec.bathymetry is not None:
        load = assemble_bathymetry_load(spaces, spec.bathymetry,
                                        spec.params.phi,
                                        grad=spec.grad_bathymetry)
        forcing = -load / spec.params.phi
    return PhiuRun(spec=spec, spaces=spaces, matrices=matrices,
                   forcing=forcing, y0=np.concatenate([q0, u0]))


def phiu_energy(run, y):
    """Quadratic energy of the dissipative scheme."""
    nw = run.spaces.scalar.ndof
    q, u = y[:nw], y[nw:]
    return 0.5 * (q @ q) + 0.5 * run.spec.params.phi * (u @ u)


def phiu_trace_mismatch(run, q, qhat):
    """Stabilized norm of the height-trace jump driving the dissipation."""
    m = run.matrices
    return (q @ (m.stab_local @ q) - 2.0 * q @ (m.stab_mixed @ qhat)
            + qhat @ (m.stab_trace @ qhat))


class PhiuIntegrator:
    """Diagonally implicit stepper for the dissipative scheme.

    Each stage solves one sparse monolithic system in (height, velocity,
    trace); the trace equation is enforced at every stage, so the
    per-step energy drop equals the stabilized jump norm of the stage
    values exactly when the midpoint tableau is used.
    """

    def __init__(self, run, tableau, dt):
        self.run = run
        self.tableau = tableau
        self.dt = float(dt)
        self._solvers = {}
        for aii in tableau.a.diagonal():
            delta = self.dt * aii
            if delta not in self._solvers:
                self._solvers[delta] = self._factorize(delta)

    def _factorize(self, delta):
        m = self.run.matrices
        phi = self.run.spec.params.phi
        nw = self.run.spaces.scalar.ndof
        nv = self.run.spaces.vector.ndof
        eye_w = sparse.identity(nw, format="csr")
        eye_v = sparse.identity(nv, format="csr")
        block = sparse.bmat([
            [eye_w + delta * m.stab_local, delta * phi * m.div_pair.T,
             -delta * m.stab_mixed],
            [-delta * m.div_pair, eye_v - delta * m.coriolis,
             delta * m.flux_pair],
            [m.stab_mixed.T, phi * m.flux_pair.T, -m.stab_trace],
        ], format="csc")
        try:
            return splu(block)
        except RuntimeError as exc:
            raise RuntimeError(
                f"stage factorization failed for stage scale {delta}") from exc

    def _slopes(self, q, u, qhat):
        m = self.run.matrices
        phi = self.run.spec.params.phi
        dq = -phi * (m.div_pair.T @ u) - m.stab_local @ q + m.stab_mixed @ qhat
        du = (m.div_pair @ q - m.flux_pair @ qhat + m.coriolis @ u
              + self.run.forcing)
        return np.concatenate([dq, du])

    def step(self, y):
        return self._advance(y)[0]

    def step_with_stages(self, y):
        """Step and also return the per-stage (height, velocity, trace)
        solutions, for energy-identity checks."""
        return self._advance(y)

    def _advance(self, y):
        run, tab, dt = self.run, self.tableau, self.dt
        nw = run.spaces.scalar.ndof
        nv = run.spaces.vector.ndof
        slopes = np.empty((tab.stages, nw + nv))
        stages = []
        for i in range(tab.stages):
            acc = y + dt * (tab.a[i, :i] @ slopes[:i])
            delta = dt * tab.a[i, i]
            rhs = np.concatenate([acc[:nw],
                                  acc[nw:] + delta * run.forcing,
                                  np.zeros(run.matrices.stab_trace.shape[0])])
            x = self._solvers[delta].solve(rhs)
            q_i, u_i, qhat_i = x[:nw], x[nw:nw + nv], x[nw + nv:]
            stages.append((q_i, u_i, qhat_i))
            slopes[i] = self._slopes(q_i, u_i, qhat_i)
        return y + dt * (tab.b @ slopes), stages


def iterate_steps(stepper, y0, nsteps):
    """Yield (step index, state) after each of nsteps steps."""
    y = y0
    for n in range(1, nsteps + 1):
        y = stepper.step(y)
        yield n, y
