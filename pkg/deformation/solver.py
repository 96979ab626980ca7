"""Landmark-guided Laplacian deformation.

:func:`deform` runs Adam on a stiffness-preconditioned displacement of the
vertices. :func:`solve_direct` solves the squared-residual form of the same
energy as one sparse linear least-squares problem; it needs an affine camera.
"""

import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import lsqr, splu

from autodiff.params import ParamStore, adam_step
from autodiff.tensor import Tensor
from deformation.energy import deformation_energy
from facesculpt.exceptions import DivergenceError, FaceSculptError, RankError
from meshes.laplacian import adjacency_matrix, graph_laplacian
from meshes.projection import affine_matrix

logger = logging.getLogger(__name__)

ENERGY_WINDOW = 50
WINDOW_RTOL = 1e-12


@dataclass
class DeformConfig:
    alpha: float = 1e7
    lr: float = 0.01
    iterations: int = 2000
    grad_tol: float = 1e-8
    divergence_patience: int = 100
    plateau_patience: int = 20
    lr_decay: float = 0.2
    min_lr: float = 1e-12

    def __post_init__(self):
        if self.alpha < 0:
            raise FaceSculptError("alpha must be non-negative")
        if self.lr <= 0:
            raise FaceSculptError("lr must be positive")
        if self.iterations < 0:
            raise FaceSculptError("iterations must be non-negative")
        if self.plateau_patience < 1:
            raise FaceSculptError("plateau_patience must be at least 1")
        if not 0.0 < self.lr_decay < 1.0:
            raise FaceSculptError("lr_decay must lie in (0, 1)")
        if self.min_lr <= 0:
            raise FaceSculptError("min_lr must be positive")

    def as_dict(self):
        return asdict(self)


@dataclass
class DeformResult:
    vertices: np.ndarray
    energies: list
    best_iteration: int
    converged: bool
    final_lr: float = 0.0

    @property
    def initial_energy(self):
        return self.energies[0]["total"]

    @property
    def final_energy(self):
        return self.energies[self.best_iteration]["total"]


class StiffnessPreconditioner:
    """The symmetric map ``u ↦ (I + α·L)⁻¹ u`` from the optimised variable to vertex offsets.

    Translations of a connected part are fixed points of the map; a non-rigid
    mode with Laplacian eigenvalue ``λ`` is scaled by ``1 / (1 + α·λ)``. With
    ``α = 0`` it is the identity.
    """

    def __init__(self, laplacian, alpha):
        self._solve = None
        if alpha > 0:
            n = laplacian.shape[0]
            self._solve = splu((sp.identity(n, format="csc") + alpha * laplacian).tocsc()).solve

    def __call__(self, u):
        if self._solve is None:
            return np.array(u, dtype=np.float64)
        return self._solve(np.ascontiguousarray(u, dtype=np.float64))


def _check_landmarks(mesh, l_z):
    if mesh.landmark_ids.size == 0:
        raise FaceSculptError("Mesh has no landmark vertex ids")
    shape = np.shape(getattr(l_z, "points", l_z))
    if shape != (mesh.landmark_ids.size, 2):
        raise FaceSculptError(
            f"Mesh has {mesh.landmark_ids.size} landmark vertices but {shape} target landmarks were given"
        )


def _check_window(energies):
    """Mean energy of each complete window must not exceed the one before it."""
    done = len(energies)
    if done % ENERGY_WINDOW or done < 2 * ENERGY_WINDOW:
        return
    totals = [entry["total"] for entry in energies[-2 * ENERGY_WINDOW :]]
    previous, current = np.mean(totals[:ENERGY_WINDOW]), np.mean(totals[ENERGY_WINDOW:])
    if current > previous + WINDOW_RTOL * abs(previous):
        raise DivergenceError(
            f"Mean energy rose from {previous:.6g} to {current:.6g} over iterations {done - ENERGY_WINDOW}-{done - 1}",
            details={"iteration": done - 1, "window_mean": current, "previous_window_mean": previous},
        )


def run_deformation(mesh, l_z, proj, cfg=None, energy_log=None):
    """Adam on the vertex positions; returns the lowest-energy iterate as a :class:`DeformResult`.

    The optimised variable is a displacement ``u`` with vertices
    ``v_x + (I + α·L)⁻¹ u``. The step size is multiplied by ``lr_decay``
    whenever the best energy has not improved for ``plateau_patience``
    iterations, and the run counts as converged once it falls below
    ``min_lr`` or the vertex gradient norm drops under ``grad_tol``.

    Raises :class:`DivergenceError` after ``divergence_patience`` consecutive
    energy increases, when a 50-iteration window mean rises above the previous
    window's, or when the energy stops being finite.
    """
    cfg = cfg or DeformConfig()
    _check_landmarks(mesh, l_z)
    laplacian = graph_laplacian(mesh)
    precondition = StiffnessPreconditioner(laplacian, cfg.alpha)
    store = ParamStore(dtype="float64")
    displacement = store.add("displacement", np.zeros_like(mesh.vertices))
    started = time.perf_counter()

    lr = cfg.lr
    energies = []
    best_energy, best_vertices, best_iteration = np.inf, mesh.vertices.copy(), 0
    rising = stalled = 0
    converged = False
    for iteration in range(cfg.iterations + 1):
        vertices = Tensor(mesh.vertices + precondition(displacement.value), requires_grad=True)
        total, landmark, smooth = deformation_energy(vertices, mesh, proj, l_z, laplacian, cfg.alpha)
        energy = total.item()
        if not np.isfinite(energy):
            raise DivergenceError("Deformation energy is not finite", details={"iteration": iteration})
        energies.append(
            {"iteration": iteration, "landmark": landmark.item(), "laplacian": smooth.item(), "total": energy}
        )
        if energy < best_energy:
            best_energy, best_vertices, best_iteration = energy, vertices.value.copy(), iteration
            stalled = 0
        else:
            stalled += 1
        if iteration and energy > energies[-2]["total"]:
            rising += 1
            if rising >= cfg.divergence_patience:
                raise DivergenceError(
                    f"Energy rose for {rising} consecutive iterations",
                    details={"iteration": iteration, "energy": energy, "best": best_energy},
                )
        else:
            rising = 0
        _check_window(energies)
        if iteration == cfg.iterations:
            break
        if stalled >= cfg.plateau_patience:
            lr *= cfg.lr_decay
            stalled = 0
            logger.debug("deform plateau iteration=%d best=%.6g lr=%.3g", iteration, best_energy, lr)
            if lr < cfg.min_lr:
                converged = True
                break
        total.backward()
        grad = vertices.grad if vertices.grad is not None else np.zeros_like(vertices.value)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < cfg.grad_tol:
            converged = True
            break
        displacement.grad = precondition(grad)
        adam_step(store, lr)
        if iteration % 100 == 0:
            logger.debug(
                "deform iteration=%d energy=%.6g landmark=%.6g laplacian=%.6g grad_norm=%.3g lr=%.3g",
                iteration,
                energy,
                energies[-1]["landmark"],
                energies[-1]["laplacian"],
                grad_norm,
                lr,
            )

    logger.info(
        "deform_done iterations=%d start=%.6g best=%.6g best_iteration=%d converged=%s lr=%.3g seconds=%.3f",
        len(energies) - 1,
        energies[0]["total"],
        best_energy,
        best_iteration,
        converged,
        lr,
        time.perf_counter() - started,
    )
    if energy_log is not None:
        write_energy_log(energies, energy_log)
    return DeformResult(best_vertices, energies, best_iteration, converged, lr)


def deform(mesh, l_z, proj, cfg=None, energy_log=None):
    """Deformed vertex array ``v_z``; faces, UVs and landmark ids are left to the caller's mesh."""
    return run_deformation(mesh, l_z, proj, cfg, energy_log).vertices


def write_energy_log(energies, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(energies, columns=["iteration", "landmark", "laplacian", "total"])
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def _landmark_rows(mesh, proj):
    """Sparse ``S·P`` block mapping the flattened vertex vector to landmark pixels, plus its offset."""
    matrix = affine_matrix(proj)
    ids = mesh.landmark_ids
    k, n = ids.size, mesh.n_vertices
    rows = np.repeat(np.arange(2 * k), 3)
    cols = (3 * np.repeat(ids, 2)[:, None] + np.arange(3)).reshape(-1)
    values = np.tile(matrix[:, :3], (k, 1)).reshape(-1)
    block = sp.csr_matrix((values, (rows, cols)), shape=(2 * k, 3 * n))
    return block, np.tile(matrix[:, 3], k)


def direct_system(mesh, l_z, proj, alpha):
    """Stacked sparse system ``[√α·L; S·P] δ = [0; l_z − S·P·v_x]`` for the displacement ``δ``."""
    targets = np.asarray(getattr(l_z, "points", l_z), dtype=np.float64).reshape(-1)
    laplacian = sp.kron(graph_laplacian(mesh), sp.identity(3), format="csr")
    block, offset = _landmark_rows(mesh, proj)
    x0 = mesh.vertices.reshape(-1)
    system = sp.vstack([np.sqrt(alpha) * laplacian, block], format="csr")
    rhs = np.concatenate([np.zeros(laplacian.shape[0]), targets - offset - block @ x0])
    return system, rhs


def solve_direct(mesh, l_z, proj, alpha):
    """Least-squares deformation of the squared-residual energy for an affine camera.

    Of all minimisers the one closest to the original vertices is returned.
    The problem is rank deficient, and rejected, when the camera loses an
    image axis or when some connected part of the mesh carries no landmark
    while ``alpha > 0``.
    """
    if not proj.is_affine:
        raise FaceSculptError("solve_direct needs an affine projection")
    if alpha < 0:
        raise FaceSculptError("alpha must be non-negative")
    _check_landmarks(mesh, l_z)
    if np.linalg.matrix_rank(affine_matrix(proj)[:, :3]) < 2:
        raise RankError("Projection collapses the image plane")
    if alpha > 0:
        n_parts, part = connected_components(adjacency_matrix(mesh), directed=False)
        unanchored = sorted(set(range(n_parts)) - set(part[mesh.landmark_ids].tolist()))
        if unanchored:
            raise RankError(
                f"{len(unanchored)} connected component(s) have no landmark vertex",
                details={"components": unanchored[:20]},
            )
    system, rhs = direct_system(mesh, l_z, proj, alpha)
    solution = lsqr(system, rhs, atol=1e-14, btol=1e-14, conlim=1e16, iter_lim=50 * system.shape[1])
    delta, stop = solution[0], solution[1]
    logger.info("solve_direct alpha=%g unknowns=%d lsqr_stop=%d iterations=%d", alpha, delta.size, stop, solution[2])
    return mesh.vertices + delta.reshape(-1, 3)
