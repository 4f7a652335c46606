"""Lagrange finite elements on triangle meshes via evaluation matrices.

Every space is represented by three sparse matrices E, Dx, Dy mapping
coefficients to values and derivatives at the mesh quadrature points.
All bilinear forms are then products of the pattern  A^T diag(w) B, so
mass, stiffness, divergence coupling and the majorant normal equations
share one assembly mechanism.

Vector fields store components as stacked blocks: a velocity vector has
coefficients [u_x; u_y], a tensor [t_xx; t_xy; t_yx; t_yy].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu, spsolve

from .mesh import TriMesh
from .quadrature import triangle_rule

__all__ = [
    "FunctionSpace",
    "FemField",
    "QuadratureField",
    "sample_at",
    "project",
    "solve_dirichlet",
    "constrained_minimize",
    "infsup_constant",
    "helmholtz_project",
]


# ----------------------------------------------------------------------
# reference shape functions on {x, y >= 0, x + y <= 1}


def _p1_ref(pts):
    x, y = pts[:, 0], pts[:, 1]
    N = np.stack([1.0 - x - y, x, y], axis=1)
    G = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return N, np.broadcast_to(G, (len(pts), 3, 2))


def _p2_ref(pts):
    x, y = pts[:, 0], pts[:, 1]
    lam = [1.0 - x - y, x, y]
    dlam = [np.array([-1.0, -1.0]), np.array([1.0, 0.0]),
            np.array([0.0, 1.0])]
    n = len(pts)
    N = np.empty((n, 6))
    G = np.empty((n, 6, 2))
    for i in range(3):
        N[:, i] = lam[i] * (2.0 * lam[i] - 1.0)
        G[:, i, :] = np.outer(4.0 * lam[i] - 1.0, dlam[i])
    edges = [(0, 1), (1, 2), (2, 0)]
    for k, (i, j) in enumerate(edges):
        N[:, 3 + k] = 4.0 * lam[i] * lam[j]
        G[:, 3 + k, :] = 4.0 * (np.outer(lam[i], dlam[j])
                                + np.outer(lam[j], dlam[i]))
    return N, G


def _p0_ref(pts):
    n = len(pts)
    return np.ones((n, 1)), np.zeros((n, 1, 2))


_REF = {"P0": _p0_ref, "P1": _p1_ref, "P2": _p2_ref}

_LOCAL_EDGES = [(0, 1), (1, 2), (2, 0)]


def _unique_edges(cells: np.ndarray):
    """Global edge numbering; returns (edges (ne,2) sorted, cell_edge (nc,3))."""
    raw = np.concatenate([np.sort(cells[:, [i, j]], axis=1)
                          for i, j in _LOCAL_EDGES])
    edges, inverse = np.unique(raw, axis=0, return_inverse=True)
    cell_edge = inverse.reshape(3, -1).T
    return edges, cell_edge


class FunctionSpace:
    """Scalar P0/P1/P2 space with quadrature-point evaluation matrices."""

    def __init__(self, mesh: TriMesh, kind: str):
        if kind not in _REF:
            raise ValueError(f"unknown space kind {kind!r}")
        self.mesh = mesh
        self.kind = kind
        V, cells = mesh.vertices, mesh.cells
        nc = len(cells)

        if kind == "P1":
            self.dofmap = cells.copy()
            self.nodes = V.copy()
        elif kind == "P2":
            edges, cell_edge = _unique_edges(cells)
            self.dofmap = np.hstack([cells, len(V) + cell_edge])
            self.nodes = np.vstack([V, 0.5 * (V[edges[:, 0]]
                                              + V[edges[:, 1]])])
            self._edges = edges
        else:
            self.dofmap = np.arange(nc)[:, None]
            self.nodes = (V[cells[:, 0]] + V[cells[:, 1]]
                          + V[cells[:, 2]]) / 3.0
        self.ndof = len(self.nodes)

        ref_pts, ref_wts = triangle_rule(mesh.quad_degree)
        Nhat, Ghat = _REF[kind](ref_pts)
        nq, nsh = Nhat.shape

        v0 = V[cells[:, 0]]
        J = np.stack([V[cells[:, 1]] - v0, V[cells[:, 2]] - v0], axis=2)
        detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        Jinv = np.empty_like(J)
        Jinv[:, 0, 0] = J[:, 1, 1] / detJ
        Jinv[:, 0, 1] = -J[:, 0, 1] / detJ
        Jinv[:, 1, 0] = -J[:, 1, 0] / detJ
        Jinv[:, 1, 1] = J[:, 0, 0] / detJ

        self.qpoints = (v0[:, None, :]
                        + np.einsum("cij,qj->cqi", J, ref_pts)
                        ).reshape(nc * nq, 2)
        self.qweights = (ref_wts[None, :] * detJ[:, None]).reshape(nc * nq)
        # physical gradients: grad phi = J^{-T} grad_ref phi
        Gphys = np.einsum("cji,qsj->cqsi", Jinv, Ghat)

        rows = np.repeat(np.arange(nc) * nq, nq * nsh) \
            + np.tile(np.repeat(np.arange(nq), nsh), nc)
        cols = np.repeat(self.dofmap, nq, axis=0).reshape(nc, nq, nsh).ravel()
        shape = (nc * nq, self.ndof)
        Edata = np.broadcast_to(Nhat, (nc, nq, nsh)).ravel()
        self.E = sp.csr_matrix((Edata, (rows, cols)), shape=shape)
        self.Dx = sp.csr_matrix((Gphys[:, :, :, 0].ravel(), (rows, cols)),
                                shape=shape)
        self.Dy = sp.csr_matrix((Gphys[:, :, :, 1].ravel(), (rows, cols)),
                                shape=shape)

    # -- bilinear forms -------------------------------------------------

    def _weighted(self, A: sp.csr_matrix, coeff) -> sp.csr_matrix:
        w = self.qweights if coeff is None else self.qweights * coeff
        return A.T @ A.multiply(w[:, None])

    def mass_matrix(self, coeff=None) -> sp.csr_matrix:
        return self._weighted(self.E, coeff)

    def stiffness_matrix(self, coeff=None) -> sp.csr_matrix:
        w = self.qweights if coeff is None else self.qweights * coeff
        return (self.Dx.T @ self.Dx.multiply(w[:, None])
                + self.Dy.T @ self.Dy.multiply(w[:, None])).tocsr()

    def load_vector(self, values_at_q) -> np.ndarray:
        return self.E.T @ (self.qweights * values_at_q)

    # -- dofs and interpolation ----------------------------------------

    def boundary_dofs(self, tags, where=None) -> np.ndarray:
        """Dofs of all facets whose tag is in `tags`.

        `where` optionally restricts to dofs whose coordinates satisfy a
        predicate (used for angular Dirichlet sectors); a facet
        contributes its vertex dofs and, for P2, its midpoint dof.
        """
        if self.kind == "P0":
            raise ValueError("P0 spaces carry no boundary dofs")
        if isinstance(tags, str):
            tags = [tags]
        mesh = self.mesh
        take = np.array([t in tags for t in mesh.facet_tags])
        dofs = set(mesh.facets[take].ravel().tolist())
        if self.kind == "P2":
            key = {tuple(e): len(mesh.vertices) + k
                   for k, e in enumerate(map(tuple, self._edges))}
            for a, b in mesh.facets[take]:
                dofs.add(key[tuple(sorted((a, b)))])
        out = np.array(sorted(dofs), dtype=int)
        if where is not None:
            out = out[where(self.nodes[out])]
        return out

    def interpolate(self, f, ncomp: int = 1) -> np.ndarray:
        """Nodal interpolation (P0: centroid values); returns flat coeffs."""
        vals = f(self.nodes) if callable(f) else f.val(self.nodes)
        vals = np.asarray(vals, dtype=float)
        if ncomp == 1:
            if vals.shape != (self.ndof,):
                raise ValueError("scalar interpolation shape mismatch")
            return vals
        if vals.shape != (self.ndof, ncomp):
            raise ValueError("vector interpolation shape mismatch")
        return vals.T.reshape(-1)


# ----------------------------------------------------------------------
# fields


@dataclass
class QuadratureField:
    """Values at quadrature points; the common currency of all integrals."""

    points: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    rank: int
    dim: int = 2

    def quad_sample(self):
        return self.points, self.weights, self.values

    def _like(self, values):
        return QuadratureField(self.points, self.weights, values, self.rank,
                               self.dim)

    def __add__(self, other):
        return self._like(self.values + _values_of(other, self))

    def __sub__(self, other):
        return self._like(self.values - _values_of(other, self))

    def __mul__(self, c):
        c = np.asarray(c, dtype=float)
        if c.ndim == 1:  # per-point factor
            return self._like(self.values
                              * c.reshape((-1,) + (1,) * (self.values.ndim
                                                          - 1)))
        return self._like(self.values * c)

    __rmul__ = __mul__

    def norm(self) -> float:
        v = self.values.reshape(len(self.weights), -1)
        return math.sqrt(max(float(np.sum(self.weights * (v * v).sum(1))),
                             0.0))


def _values_of(other, ref: QuadratureField) -> np.ndarray:
    if isinstance(other, QuadratureField):
        if len(other.weights) != len(ref.weights):
            raise ValueError("quadrature fields live on different grids")
        return other.values
    if isinstance(other, FemField):
        return other.quad_values()
    if hasattr(other, "val"):
        return other.val(ref.points)
    raise TypeError(f"cannot combine with {type(other)}")


def sample_at(field, points: np.ndarray, weights: np.ndarray,
              derivative: str | None = None) -> QuadratureField:
    """Sample an analytic field (or its derivative) on a quadrature set."""
    src = field if derivative is None else field.differentiate(derivative)
    vals = src.val(points)
    rank = getattr(src, "rank", 1 if vals.ndim == 2 else vals.ndim - 1)
    return QuadratureField(points, weights, vals, rank)


class FemField:
    """Coefficient vector in a (blocked) finite element space."""

    def __init__(self, space: FunctionSpace, coeffs, rank: int | None = None):
        coeffs = np.asarray(coeffs, dtype=float).reshape(-1)
        ncomp, rem = divmod(len(coeffs), space.ndof)
        if rem or ncomp not in (1, 2, 4):
            raise ValueError("coefficient length does not match the space")
        self.space = space
        self.coeffs = coeffs
        self.ncomp = ncomp
        self.rank = {1: 0, 2: 1, 4: 2}[ncomp] if rank is None else rank
        self.dim = 2

    @property
    def blocks(self):
        return self.coeffs.reshape(self.ncomp, self.space.ndof)

    def quad_values(self) -> np.ndarray:
        E = self.space.E
        vals = [E @ b for b in self.blocks]
        if self.ncomp == 1:
            return vals[0]
        if self.ncomp == 2:
            return np.stack(vals, axis=1)
        return np.stack(vals, axis=1).reshape(-1, 2, 2)

    def quad_sample(self):
        return self.space.qpoints, self.space.qweights, self.quad_values()

    def as_quadrature_field(self) -> QuadratureField:
        return QuadratureField(self.space.qpoints, self.space.qweights,
                               self.quad_values(), self.rank)

    def differentiate(self, op: str) -> QuadratureField:
        s = self.space
        Dx, Dy = s.Dx, s.Dy
        b = self.blocks
        if op == "grad":
            if self.rank == 0:
                vals = np.stack([Dx @ b[0], Dy @ b[0]], axis=1)
                return QuadratureField(s.qpoints, s.qweights, vals, 1)
            if self.rank == 1:
                G = np.empty((len(s.qweights), 2, 2))
                for i in range(2):
                    G[:, i, 0] = Dx @ b[i]
                    G[:, i, 1] = Dy @ b[i]
                return QuadratureField(s.qpoints, s.qweights, G, 2)
            raise ValueError("grad of a tensor field is not provided")
        if op == "div":
            if self.rank != 1:
                raise ValueError("div acts on vector fields")
            vals = Dx @ b[0] + Dy @ b[1]
            return QuadratureField(s.qpoints, s.qweights, vals, 0)
        if op == "rot":
            if self.rank != 1:
                raise ValueError("rot acts on vector fields")
            vals = Dx @ b[1] - Dy @ b[0]
            return QuadratureField(s.qpoints, s.qweights, vals, 0)
        if op == "Div":
            if self.rank != 2:
                raise ValueError("Div acts on tensor fields row-wise")
            vals = np.stack([Dx @ b[0] + Dy @ b[1],
                             Dx @ b[2] + Dy @ b[3]], axis=1)
            return QuadratureField(s.qpoints, s.qweights, vals, 1)
        raise ValueError(f"unknown operation {op!r}")

    def __add__(self, other):
        if not (isinstance(other, FemField) and other.space is self.space):
            return self.as_quadrature_field() + other
        return FemField(self.space, self.coeffs + other.coeffs, self.rank)

    def __sub__(self, other):
        if not (isinstance(other, FemField) and other.space is self.space):
            return self.as_quadrature_field() - other
        return FemField(self.space, self.coeffs - other.coeffs, self.rank)

    def __mul__(self, c):
        return FemField(self.space, float(c) * self.coeffs, self.rank)

    __rmul__ = __mul__


def project(space: FunctionSpace, values_at_q, ncomp: int = 1) -> FemField:
    """L2 projection of quadrature-point data onto the space."""
    M = space.mass_matrix().tocsc()
    lu = splu(M)
    vals = np.asarray(values_at_q, dtype=float)
    if ncomp == 1:
        return FemField(space, lu.solve(space.load_vector(vals)))
    flat = vals.reshape(len(space.qweights), ncomp)
    coeffs = [lu.solve(space.load_vector(flat[:, i])) for i in range(ncomp)]
    return FemField(space, np.concatenate(coeffs))


# ----------------------------------------------------------------------
# block operators


def vector_dofs(space: FunctionSpace, scalar_dofs: np.ndarray) -> np.ndarray:
    """Flat dof indices of both components for the given scalar dofs."""
    return np.concatenate([scalar_dofs, scalar_dofs + space.ndof])


def vector_stiffness(space: FunctionSpace, coeff=None) -> sp.csr_matrix:
    K = space.stiffness_matrix(coeff)
    return sp.block_diag([K, K], format="csr")


def vector_mass(space: FunctionSpace, coeff=None) -> sp.csr_matrix:
    M = space.mass_matrix(coeff)
    return sp.block_diag([M, M], format="csr")


def divergence_matrix(vspace: FunctionSpace, pspace: FunctionSpace
                      ) -> sp.csr_matrix:
    """B with (B u)_q = int q div(u): rows pressure dofs, cols velocity."""
    W = vspace.qweights[:, None]
    EpW = pspace.E.multiply(W).T
    return sp.hstack([EpW @ vspace.Dx, EpW @ vspace.Dy], format="csr")


def vector_load(space: FunctionSpace, values_at_q) -> np.ndarray:
    v = np.asarray(values_at_q, dtype=float)
    return np.concatenate([space.load_vector(v[:, 0]),
                           space.load_vector(v[:, 1])])


# ----------------------------------------------------------------------
# solvers


def _free(n: int, fixed: np.ndarray) -> np.ndarray:
    mask = np.ones(n, dtype=bool)
    mask[fixed] = False
    return np.where(mask)[0]


def solve_dirichlet(A: sp.spmatrix, b: np.ndarray, fixed: np.ndarray,
                    fixed_values: np.ndarray | None = None) -> np.ndarray:
    """Solve A x = b with x[fixed] prescribed (zero unless given)."""
    A = A.tocsr()
    n = A.shape[0]
    x = np.zeros(n)
    if fixed_values is not None:
        x[fixed] = fixed_values
    free = _free(n, fixed)
    rhs = b[free] - A[free][:, fixed] @ x[fixed]
    x[free] = spsolve(A[free][:, free].tocsc(), rhs)
    return x


# beyond this KKT dimension the sparse LU of the indefinite saddle
# matrix degrades badly; the Schur path factors only the SPD block
_DIRECT_KKT_LIMIT = 8000


def _schur_minimize(Kff, Bf, b, f0, mean_vector, precond):
    """Solve the saddle system by CG on the pressure Schur complement.

    With a full Dirichlet boundary the constraint rows sum to zero, so
    the Schur operator has the constant left kernel; b is shifted along
    mean_vector to compatibility (the same defect absorption the
    bordered direct solve performs) and the iteration runs in the
    orthogonal complement of the constants.
    """
    luK = splu(Kff.tocsc())
    Bf = Bf.tocsr()
    np_ = Bf.shape[0]
    ones = np.ones(np_)
    if mean_vector is not None:
        b = b - mean_vector * (float(ones @ b) / float(ones @ mean_vector))

    def project(x):
        if mean_vector is None:
            return x
        return x - ones * (float(ones @ x) / np_)

    luM = splu(precond.tocsc()) if precond is not None else None

    def apply_prec(x):
        return project(luM.solve(x)) if luM is not None else project(x)

    lam = np.zeros(np_)
    r = project(Bf @ luK.solve(f0) - b)
    scale = max(np.linalg.norm(r), 1e-300)
    z = apply_prec(r)
    p = z.copy()
    rz = float(r @ z)
    for _ in range(400):
        if np.linalg.norm(r) <= 1e-12 * scale:
            break
        Sp = project(Bf @ luK.solve(Bf.T @ p))
        alpha = rz / float(p @ Sp)
        lam += alpha * p
        r -= alpha * Sp
        z = apply_prec(r)
        rz_next = float(r @ z)
        p = z + (rz_next / rz) * p
        rz = rz_next
    else:
        raise RuntimeError("Schur iteration for the saddle system stalled")
    if mean_vector is not None:
        lam -= float(mean_vector @ lam) / float(mean_vector @ ones)
    uf = luK.solve(f0 - Bf.T @ lam)
    return uf, lam


def constrained_minimize(K: sp.spmatrix, B: sp.spmatrix, b: np.ndarray,
                         fixed: np.ndarray, mean_vector: np.ndarray | None
                         = None, rhs: np.ndarray | None = None,
                         schur_precond: sp.spmatrix | None = None):
    """Minimize 1/2 u^T K u - rhs.u subject to B u = b and u[fixed] = 0.

    When the constraint rows are rank-deficient by constants (full
    Dirichlet boundary), pass mean_vector m = M_p 1; the multiplier is
    then pinned to the mean-zero complement and the constraint is
    enforced up to its own mean defect.

    Large systems go through conjugate gradients on the Schur
    complement; schur_precond (ideally the pressure mass matrix) speeds
    that path up but does not change the answer.
    Returns (u, multiplier).
    """
    K = K.tocsr()
    B = B.tocsr()
    n = K.shape[0]
    free = _free(n, fixed)
    Kff = K[free][:, free]
    Bf = B[:, free]
    np_ = B.shape[0]
    f0 = np.zeros(len(free)) if rhs is None else rhs[free]

    if len(free) + np_ > _DIRECT_KKT_LIMIT:
        uf, lam = _schur_minimize(Kff, Bf, b, f0, mean_vector, schur_precond)
        u = np.zeros(n)
        u[free] = uf
        return u, lam

    blocks = [[Kff, Bf.T], [Bf, None]]
    parts = [f0, b]
    if mean_vector is not None:
        m = sp.csr_matrix(mean_vector.reshape(1, -1))
        blocks[0].append(None)
        blocks[1].append(m.T)
        blocks.append([None, m, None])
        parts.append(np.zeros(1))
    A = sp.bmat(blocks, format="csc")
    sol = splu(A).solve(np.concatenate(parts))
    u = np.zeros(n)
    u[free] = sol[:len(free)]
    lam = sol[len(free):len(free) + np_]
    return u, lam


def infsup_constant(K: sp.spmatrix, B: sp.spmatrix, Mp: sp.spmatrix,
                    fixed: np.ndarray, drop_constants: bool) -> float:
    """Discrete inf-sup value: sqrt of the smallest relevant eigenvalue of
    B K^{-1} B^T q = lambda M_p q on the free velocity dofs.

    drop_constants skips the zero eigenvalue of the constant-pressure
    kernel present when the whole boundary is Dirichlet.
    """
    K = K.tocsr()
    free = _free(K.shape[0], fixed)
    lu = splu(K[free][:, free].tocsc())
    BT = B.tocsr()[:, free].T.toarray()
    S = BT.T @ lu.solve(BT)
    S = 0.5 * (S + S.T)
    w = scipy.linalg.eigh(S, Mp.toarray(), eigvals_only=True)
    lam = w[1] if drop_constants else w[0]
    if lam <= 0.0:
        raise RuntimeError("inf-sup eigenvalue not positive; "
                           "discretization degenerate")
    return math.sqrt(lam)


def helmholtz_project(tensor: QuadratureField, nu_at_q: np.ndarray,
                      vspace: FunctionSpace, dirichlet: np.ndarray):
    """Split a tensor into nu-weighted gradient and divergence-free parts.

    Solves <nu grad w, grad phi> = <nu tensor, grad phi> for w in the
    vector space with zero trace on the given scalar dofs; returns
    (gradient_part, divfree_part, w_field).  The parts are nu-orthogonal
    up to solver tolerance.
    """
    if tensor.rank != 2:
        raise ValueError("helmholtz projection acts on tensor fields")
    nu = np.asarray(nu_at_q, dtype=float)
    if np.any(nu <= 0.0):
        raise ValueError("viscosity must be strictly positive")
    K = vector_stiffness(vspace, coeff=nu)
    wq = vspace.qweights * nu
    T = tensor.values
    rhs = np.concatenate([
        vspace.Dx.T @ (wq * T[:, 0, 0]) + vspace.Dy.T @ (wq * T[:, 0, 1]),
        vspace.Dx.T @ (wq * T[:, 1, 0]) + vspace.Dy.T @ (wq * T[:, 1, 1]),
    ])
    fixed = vector_dofs(vspace, dirichlet)
    w = FemField(vspace, solve_dirichlet(K, rhs, fixed))
    grad_part = w.differentiate("grad")
    return grad_part, tensor - grad_part, w
