import numpy as np
import scipy.sparse as sp


def mesh_edges(faces):
    """Unique undirected edges ``(i, j)`` with ``i < j``."""
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    edges = np.vstack([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    return np.unique(edges, axis=0)


def adjacency_matrix(mesh):
    edges = mesh_edges(mesh.faces)
    n = mesh.n_vertices
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))


def graph_laplacian(mesh):
    """Uniform Laplacian ``L = D − A`` of the face edge graph, as a CSR matrix."""
    adjacency = adjacency_matrix(mesh)
    degree = np.asarray(adjacency.sum(axis=1)).reshape(-1)
    return (sp.diags(degree) - adjacency).tocsr()
