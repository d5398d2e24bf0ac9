"""Shared oracles for the test suite.

The monolithic global system built here is assembled from the public
per-element operations, keeping the fine-scale coefficients as explicit
unknowns appended after the (velocity, pressure) block.  It exists only
for verification: the production path condenses the fine scale away.
"""

from __future__ import annotations

import numpy as np

from vmsflow.mesh import BoundaryConditions, build_dof_map
from vmsflow.newton import State, element_dofs, element_residuals, element_tangent

BLOCK_NAMES = ("Kcc", "Kcp", "Kcf", "Kpc", "Kpf", "Kfc", "Kfp", "Kff")


def all_neumann_bc(mesh) -> BoundaryConditions:
    """Zero-traction condition on every tag: no constrained DOFs at all."""
    return BoundaryConditions(dirichlet={}, neumann={tag: None for tag in mesh.tags})


def random_state(mesh, rng, dt=None) -> State:
    state = State(
        vbar=rng.uniform(-1.0, 1.0, (mesh.n_nodes, 2)),
        p=rng.uniform(-1.0, 1.0, mesh.n_nodes),
        beta=rng.uniform(-1.0, 1.0, (mesh.n_triangles, 2)),
    )
    if dt is not None:
        state.dt = dt
        state.vbar_prev = rng.uniform(-1.0, 1.0, (mesh.n_nodes, 2))
    return state


def element_tangent_matrix(tan) -> np.ndarray:
    """Dense 11x11 element tangent over (6 velocity, 3 pressure, 2 fine) DOFs."""
    K = np.zeros((11, 11))
    K[:6, :6] = tan.Kcc
    K[:6, 6:9] = tan.Kcp
    K[:6, 9:] = tan.Kcf
    K[6:9, :6] = tan.Kpc
    K[6:9, 9:] = tan.Kpf
    K[9:, :6] = tan.Kfc
    K[9:, 6:9] = tan.Kfp
    K[9:, 9:] = tan.Kff
    return K


def monolithic_coordinates(mesh, dofmap):
    """Global unknown layout [free (v, p) DOFs; all fine-scale pairs]."""
    n_free = dofmap.free.size
    total = n_free + 2 * mesh.n_triangles
    pos_of_global = -np.ones(dofmap.total, dtype=np.int64)
    pos_of_global[dofmap.free] = np.arange(n_free)
    return total, pos_of_global


def set_monolithic(mesh, dofmap, template: State, x: np.ndarray) -> State:
    """State whose free unknowns are replaced by the coordinate vector x."""
    total, pos = monolithic_coordinates(mesh, dofmap)
    assert x.size == total
    state = template.copy()
    n = mesh.n_nodes
    flat_v = state.vbar.reshape(-1)
    for g in range(2 * n):
        if pos[g] >= 0:
            flat_v[g] = x[pos[g]]
    for node in range(n):
        g = 2 * n + node
        if pos[g] >= 0:
            state.p[node] = x[pos[g]]
    n_free = dofmap.free.size
    state.beta = x[n_free:].reshape(mesh.n_triangles, 2).copy()
    return state


def get_monolithic(mesh, dofmap, state: State) -> np.ndarray:
    total, pos = monolithic_coordinates(mesh, dofmap)
    x = np.empty(total)
    full = np.concatenate([state.vbar.reshape(-1), state.p])
    x[: dofmap.free.size] = full[dofmap.free]
    x[dofmap.free.size:] = state.beta.reshape(-1)
    return x


def monolithic_residual(mesh, dofmap, state: State, nu, body_force=None) -> np.ndarray:
    """Global [Rc; Rp] on free DOFs followed by every element's Rf."""
    edofs = element_dofs(mesh, dofmap)
    res_vp = np.zeros(dofmap.total)
    rf = np.zeros((mesh.n_triangles, 2))
    for e in range(mesh.n_triangles):
        r = element_residuals(mesh, e, state, nu, body_force)
        np.add.at(res_vp, edofs[e], np.concatenate([r.Rc, r.Rp]))
        rf[e] = r.Rf
    return np.concatenate([res_vp[dofmap.free], rf.reshape(-1)])


def monolithic_tangent(mesh, dofmap, state: State, nu) -> np.ndarray:
    """Dense global tangent over [free (v, p); all fine] coordinates."""
    total, pos = monolithic_coordinates(mesh, dofmap)
    edofs = element_dofs(mesh, dofmap)
    n_free = dofmap.free.size
    K = np.zeros((total, total))
    for e in range(mesh.n_triangles):
        Ke = element_tangent_matrix(element_tangent(mesh, e, state, nu))
        gdofs = np.concatenate([pos[edofs[e]], n_free + 2 * e + np.arange(2)])
        for i, gi in enumerate(gdofs):
            if gi < 0:
                continue
            for j, gj in enumerate(gdofs):
                if gj >= 0:
                    K[gi, gj] += Ke[i, j]
    return K
