"""Elementwise orthonormal polynomial bases, quadrature, and dof maps.

Volume spaces are spanned by scaled monomials orthonormalized on each
physical element, so element mass matrices are the identity and the
semidiscrete system needs no mass solves.  Facet spaces carry an
orthonormal Legendre basis per facet; periodic slave facets alias the
dofs of their master and evaluate through the stored translation.
"""

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import legvander
from scipy.special import roots_jacobi, roots_legendre

from .mesh import PERIODIC_SLAVE

_MAX_DEGREE = 40


@dataclass(frozen=True)
class QuadratureRule:
    """Points and weights on the reference triangle or unit segment."""
    points: np.ndarray
    weights: np.ndarray
    degree: int


def quadrature(domain, degree):
    """Rule exact for polynomials of total degree ``degree``.

    Segment rules live on [0, 1]; triangle rules on the reference
    triangle with vertices (0,0), (1,0), (0,1), built as a Duffy product
    of Gauss-Legendre in the collapsed direction and Gauss-Jacobi(1, 0)
    in the other, which keeps the point count at ceil((d+1)/2)^2.
    """
    if degree < 0 or degree > _MAX_DEGREE:
        raise ValueError(f"unsupported quadrature degree {degree}")
    n = max(1, math.ceil((degree + 1) / 2))
    if domain == "segment":
        x, w = roots_legendre(n)
        return QuadratureRule(0.5 * (x + 1.0), 0.5 * w, degree)
    if domain == "triangle":
        xi, wxi = roots_legendre(n)
        xi = 0.5 * (xi + 1.0)
        wxi = 0.5 * wxi
        xj, wj = roots_jacobi(n, 1.0, 0.0)
        eta = 0.5 * (xj + 1.0)
        weta = 0.25 * wj
        pts = np.empty((n * n, 2))
        pts[:, 0] = np.outer(1.0 - eta, xi).ravel()
        pts[:, 1] = np.repeat(eta, n)
        wts = np.outer(weta, wxi).ravel()
        return QuadratureRule(pts, wts, degree)
    raise ValueError(f"unknown quadrature domain {domain!r}")


def _monomial_exponents(k):
    exps = [(a, d - a) for d in range(k + 1) for a in range(d, -1, -1)]
    return np.array([e[0] for e in exps]), np.array([e[1] for e in exps])


def _derivative_matrices(aexp, bexp):
    m = len(aexp)
    index = {(a, b): j for j, (a, b) in enumerate(zip(aexp, bexp))}
    dx = np.zeros((m, m))
    dy = np.zeros((m, m))
    for j, (a, b) in enumerate(zip(aexp, bexp)):
        if a > 0:
            dx[j, index[(a - 1, b)]] = a
        if b > 0:
            dy[j, index[(a, b - 1)]] = b
    return dx, dy


class ScalarSpace:
    """Discontinuous piecewise polynomials of degree k on a triangle mesh.

    The basis is orthonormal in the element L2 inner product (scaled
    monomials put through two rounds of Cholesky orthonormalization).
    Dofs are blocked per element: global dof = element * dim_local + i,
    with local functions ordered by total degree.

    Parameters
    ----------
    mesh : Mesh
    k : int
        Polynomial degree, 0 to 6.
    quad_degree : int, optional
        Volume quadrature exactness, default 2k + 3.  Raise it when
        integrating rough coefficient functions.
    """

    def __init__(self, mesh, k, quad_degree=None):
        if not 0 <= k <= 6:
            raise ValueError("degree k must be between 0 and 6")
        self.mesh = mesh
        self.k = k
        self.aexp, self.bexp = _monomial_exponents(k)
        self.dim_local = len(self.aexp)
        self.quad_degree = 2 * k + 3 if quad_degree is None else quad_degree
        self.ndof = mesh.num_elements * self.dim_local

        rule = quadrature("triangle", self.quad_degree)
        verts = mesh.nodes[mesh.elements]
        v0 = verts[:, 0]
        e1 = verts[:, 1] - v0
        e2 = verts[:, 2] - v0
        ref = rule.points
        self.qref = rule
        self.qpoints = (v0[:, None, :]
                        + ref[None, :, 0, None] * e1[:, None, :]
                        + ref[None, :, 1, None] * e2[:, None, :])
        self.qweights = rule.weights[None, :] * (2.0 * mesh.element_areas)[:, None]

        self.centers = verts.mean(axis=1)
        self.scales = np.linalg.norm(verts - self.centers[:, None, :], axis=2).max(axis=1)

        dxm, dym = _derivative_matrices(self.aexp, self.bexp)
        mono = self._monomials(np.arange(mesh.num_elements), self.qpoints)
        gram = np.einsum("eqi,eqj,eq->eij", mono, mono, self.qweights)
        coeff = _inv_lower(np.linalg.cholesky(gram))
        vals = np.einsum("eij,eqj->eqi", coeff, mono)
        gram = np.einsum("eqi,eqj,eq->eij", vals, vals, self.qweights)
        coeff = _inv_lower(np.linalg.cholesky(gram)) @ coeff
        self.coeff = coeff
        self.coeff_dx = coeff @ dxm
        self.coeff_dy = coeff @ dym
        self.tab = np.einsum("eij,eqj->eqi", coeff, mono)
        inv_s = 1.0 / self.scales[:, None, None]
        self.tab_dx = np.einsum("eij,eqj->eqi", self.coeff_dx, mono) * inv_s
        self.tab_dy = np.einsum("eij,eqj->eqi", self.coeff_dy, mono) * inv_s

    def _monomials(self, elems, pts):
        rel = (pts - self.centers[elems][:, None, :]) / self.scales[elems][:, None, None]
        return rel[..., 0:1] ** self.aexp * rel[..., 1:2] ** self.bexp

    def batch_values(self, elems, pts):
        """Basis values on many elements at once: (n, q, 2) points for
        element ids ``elems`` give an (n, q, dim_local) array."""
        mono = self._monomials(elems, pts)
        return np.einsum("eij,eqj->eqi", self.coeff[elems], mono)

    def batch_grads(self, elems, pts):
        """Basis gradients, returned as a pair of (n, q, dim_local) arrays."""
        mono = self._monomials(elems, pts)
        inv_s = 1.0 / self.scales[elems][:, None, None]
        gx = np.einsum("eij,eqj->eqi", self.coeff_dx[elems], mono) * inv_s
        gy = np.einsum("eij,eqj->eqi", self.coeff_dy[elems], mono) * inv_s
        return gx, gy

    def values(self, coeffs):
        """Field values at the volume quadrature points, (ne, nq)."""
        u = np.asarray(coeffs).reshape(self.mesh.num_elements, self.dim_local)
        return np.einsum("eqi,ei->eq", self.tab, u)

    def grad_values(self, coeffs):
        u = np.asarray(coeffs).reshape(self.mesh.num_elements, self.dim_local)
        return (np.einsum("eqi,ei->eq", self.tab_dx, u),
                np.einsum("eqi,ei->eq", self.tab_dy, u))

    def project(self, func):
        """L2 projection of ``func(x, y)``; exact for degree <= k data."""
        vals = func(self.qpoints[..., 0], self.qpoints[..., 1])
        vals = np.broadcast_to(vals, self.qweights.shape)
        coeffs = np.einsum("eq,eq,eqi->ei", vals, self.qweights, self.tab)
        return GridFunction(self, coeffs.ravel())


class VectorSpace:
    """Two stacked copies of a ScalarSpace.

    Per element the x block precedes the y block:
    global dof = element * 2 * m + component * m + i.
    """

    def __init__(self, scalar):
        self.scalar = scalar
        self.mesh = scalar.mesh
        self.k = scalar.k
        self.dim_local = 2 * scalar.dim_local
        self.ndof = 2 * scalar.ndof

    def reshape(self, coeffs):
        """(ne, 2, m) view of a coefficient vector."""
        return np.asarray(coeffs).reshape(self.mesh.num_elements, 2, self.scalar.dim_local)

    def values(self, coeffs):
        """Field values at the volume quadrature points, (ne, nq, 2)."""
        u = self.reshape(coeffs)
        return np.einsum("eqi,eci->eqc", self.scalar.tab, u)

    def rot_values(self, coeffs):
        """rot z = dz2/dx - dz1/dy at the volume quadrature points."""
        u = self.reshape(coeffs)
        return (np.einsum("eqi,ei->eq", self.scalar.tab_dx, u[:, 1])
                - np.einsum("eqi,ei->eq", self.scalar.tab_dy, u[:, 0]))

    def div_values(self, coeffs):
        u = self.reshape(coeffs)
        return (np.einsum("eqi,ei->eq", self.scalar.tab_dx, u[:, 0])
                + np.einsum("eqi,ei->eq", self.scalar.tab_dy, u[:, 1]))

    def project(self, func):
        """L2 projection of a vector field given as func(x, y) -> (z1, z2)."""
        s = self.scalar
        z1, z2 = func(s.qpoints[..., 0], s.qpoints[..., 1])
        coeffs = np.stack([
            np.einsum("eq,eq,eqi->ei", np.broadcast_to(z1, s.qweights.shape), s.qweights, s.tab),
            np.einsum("eq,eq,eqi->ei", np.broadcast_to(z2, s.qweights.shape), s.qweights, s.tab),
        ], axis=1)
        return GridFunction(self, coeffs.ravel())


class TraceSpace:
    """Single-valued polynomial traces of degree k on the facet skeleton.

    Every facet carries an orthonormal Legendre basis in the arclength
    parameter running from its smaller to its larger node id.  Periodic
    slave facets own no dofs: their rows in the tabulated arrays hold the
    master's basis evaluated through the periodic translation, so facet
    integrals on either side of a paired boundary hit the same dofs.
    """

    def __init__(self, mesh, k, quad_degree=None):
        if not 0 <= k <= 6:
            raise ValueError("degree k must be between 0 and 6")
        self.mesh = mesh
        self.k = k
        self.dim_local = k + 1
        self.quad_degree = 2 * k + 3 if quad_degree is None else quad_degree

        nf = mesh.num_facets
        owned_mask = np.array([t != PERIODIC_SLAVE for t in mesh.facet_tag])
        self.owned = np.where(owned_mask)[0]
        row = np.full(nf, -1, dtype=np.int64)
        row[self.owned] = np.arange(len(self.owned))
        for f in np.where(~owned_mask)[0]:
            row[f] = row[mesh.facet_pair[f]]
        self.owner_row = row
        self.owner = np.where(owned_mask, np.arange(nf), mesh.facet_pair)
        self.ndof = len(self.owned) * self.dim_local

        rule = quadrature("segment", self.quad_degree)
        self.qref = rule
        a = mesh.nodes[mesh.facet_nodes[:, 0]]
        b = mesh.nodes[mesh.facet_nodes[:, 1]]
        t = rule.points
        self.qpoints = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
        self.qweights = rule.weights[None, :] * mesh.facet_lengths[:, None]
        self.tvals = self._tabulate(np.arange(nf), self.qpoints)

    def _tabulate(self, facets, pts):
        """Owner basis values at physical points lying on the facets."""
        mesh = self.mesh
        own = self.owner[facets]
        shifted = pts + mesh.periodic_shift[facets][:, None, :]
        a = mesh.nodes[mesh.facet_nodes[own, 0]]
        b = mesh.nodes[mesh.facet_nodes[own, 1]]
        length = mesh.facet_lengths[own]
        d = (b - a) / length[:, None]
        s = np.einsum("fqd,fd->fq", shifted - a[:, None, :], d) / length[:, None]
        scale = np.sqrt((2.0 * np.arange(self.dim_local) + 1.0)[None, :] / length[:, None])
        vander = legvander(2.0 * s - 1.0, self.k)
        return vander * scale[:, None, :]

    def facet_values(self, facet, pts):
        """Basis values of ``facet``'s dofs at points on that facet."""
        return self._tabulate(np.array([facet]), pts[None])[0]

    def dofs_of_facet(self, facet):
        r = self.owner_row[facet]
        return r * self.dim_local + np.arange(self.dim_local)

    def project(self, func):
        """Per-facet L2 projection of ``func(x, y)`` (owned facets only)."""
        coeffs = np.zeros(self.ndof)
        own = self.owned
        vals = func(self.qpoints[own, :, 0], self.qpoints[own, :, 1])
        vals = np.broadcast_to(vals, self.qweights[own].shape)
        local = np.einsum("fq,fq,fqj->fj", vals, self.qweights[own], self.tvals[own])
        coeffs[:] = local.ravel()
        return GridFunction(self, coeffs)

    def values(self, coeffs, facets=None):
        """Trace values at the facet quadrature points, (nf, nq)."""
        if facets is None:
            facets = np.arange(self.mesh.num_facets)
        c = np.asarray(coeffs).reshape(-1, self.dim_local)[self.owner_row[facets]]
        return np.einsum("fqj,fj->fq", self.tvals[facets], c)


class TangentialTraceSpace(TraceSpace):
    """Facet vector fields parallel to the facet tangent.

    Scalar coefficients per owned facet multiply the owner facet's unit
    tangent, so members have zero normal component on every facet and a
    single value (hence zero tangential jump) on interior facets by
    construction.
    """

    def __init__(self, mesh, k, quad_degree=None):
        super().__init__(mesh, k, quad_degree)
        self.tangent = mesh.facet_tangents[self.owner]

    def vector_values(self, coeffs, facets=None):
        if facets is None:
            facets = np.arange(self.mesh.num_facets)
        scal = self.values(coeffs, facets)
        return scal[..., None] * self.tangent[facets][:, None, :]


class GridFunction:
    """Coefficient vector bound to a space, with pointwise evaluation."""

    def __init__(self, space, coeffs=None):
        self.space = space
        if coeffs is None:
            coeffs = np.zeros(space.ndof)
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (space.ndof,):
            raise ValueError("coefficient vector length does not match the space")
        self.coeffs = coeffs

    def _locate(self, x, y):
        mesh = self.space.mesh
        p = np.array([x, y])
        verts = mesh.nodes[mesh.elements]
        v0, v1, v2 = verts[:, 0], verts[:, 1], verts[:, 2]
        d = p - v0
        e1 = v1 - v0
        e2 = v2 - v0
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        lam1 = (d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]) / det
        lam2 = (e1[:, 0] * d[:, 1] - e1[:, 1] * d[:, 0]) / det
        ok = (lam1 >= -1e-12) & (lam2 >= -1e-12) & (lam1 + lam2 <= 1.0 + 1e-12)
        hits = np.where(ok)[0]
        if len(hits) == 0:
            raise ValueError(f"point ({x}, {y}) lies outside the mesh")
        return int(hits[0])

    def _element_coeffs(self, e):
        if isinstance(self.space, VectorSpace):
            return self.space.reshape(self.coeffs)[e]
        m = self.space.dim_local
        return self.coeffs[e * m:(e + 1) * m]

    def eval(self, x, y):
        """Field value at a point (scalar, or length-2 array)."""
        e = self._locate(x, y)
        pts = np.array([[[x, y]]])
        if isinstance(self.space, VectorSpace):
            basis = self.space.scalar.batch_values(np.array([e]), pts)[0, 0]
            c = self._element_coeffs(e)
            return c @ basis
        basis = self.space.batch_values(np.array([e]), pts)[0, 0]
        return float(self._element_coeffs(e) @ basis)

    def eval_grad(self, x, y):
        """Gradient of a scalar field at a point."""
        if isinstance(self.space, VectorSpace):
            raise ValueError("eval_grad applies to scalar fields")
        e = self._locate(x, y)
        pts = np.array([[[x, y]]])
        gx, gy = self.space.batch_grads(np.array([e]), pts)
        c = self._element_coeffs(e)
        return np.array([float(c @ gx[0, 0]), float(c @ gy[0, 0])])

    def eval_div(self, x, y):
        """Divergence of a vector field at a point."""
        if not isinstance(self.space, VectorSpace):
            raise ValueError("eval_div applies to vector fields")
        e = self._locate(x, y)
        pts = np.array([[[x, y]]])
        gx, gy = self.space.scalar.batch_grads(np.array([e]), pts)
        c = self._element_coeffs(e)
        return float(c[0] @ gx[0, 0] + c[1] @ gy[0, 0])

    def eval_rot(self, x, y):
        """rot z = dz2/dx - dz1/dy of a vector field at a point."""
        if not isinstance(self.space, VectorSpace):
            raise ValueError("eval_rot applies to vector fields")
        e = self._locate(x, y)
        pts = np.array([[[x, y]]])
        gx, gy = self.space.scalar.batch_grads(np.array([e]), pts)
        c = self._element_coeffs(e)
        return float(c[1] @ gx[0, 0] - c[0] @ gy[0, 0])


def project(space, func):
    """L2 projection of an analytic function onto any of the spaces."""
    return space.project(func)


@dataclass
class SpaceSet:
    """The spaces of one discretization, all on the same mesh and degree."""
    scalar: ScalarSpace
    vector: VectorSpace
    trace: TraceSpace
    tangential: TangentialTraceSpace = None

    @property
    def mesh(self):
        return self.scalar.mesh

    @property
    def k(self):
        return self.scalar.k


def build_spaces(mesh, k, quad_degree=None, tangential=False):
    """Scalar, vector, and trace spaces sharing one set of tabulations."""
    scalar = ScalarSpace(mesh, k, quad_degree)
    spaces = SpaceSet(scalar, VectorSpace(scalar), TraceSpace(mesh, k, quad_degree))
    if tangential:
        spaces.tangential = TangentialTraceSpace(mesh, k, quad_degree)
    return spaces


def _inv_lower(lower):
    """Batched inverse of lower-triangular factors."""
    n = lower.shape[-1]
    eye = np.broadcast_to(np.eye(n), lower.shape).copy()
    return np.linalg.solve(lower, eye)
