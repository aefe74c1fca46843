"""Seeded random walker on the 6-connected foreground voxel graph.

Edge weights are ``exp(-beta * (q_i - q_j)**2) + eps_w``. For every connected
foreground component the combinatorial Dirichlet problem
``L_U x^j = -B^T p^j`` is solved for all but the last seed of the component;
the last channel follows from the probabilities summing to one.
"""

import heapq
from dataclasses import dataclass

import numba
import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import ConvergenceError, UnseededComponentError

__all__ = [
    "VoxelGraph",
    "ProbabilityField",
    "build_graph",
    "laplacian",
    "laplacian_row_sums",
    "pcg",
    "solve_dirichlet",
    "solve_graph_dirichlet",
    "combine_probabilities",
    "response_image",
    "grow_seed_regions",
]

WEIGHT_FLOOR = 1e-6
PROB_FLOOR = 1e-12


@dataclass
class VoxelGraph:
    """Weighted undirected graph; vertex ``i`` is voxel ``index[i]`` (flat)."""

    shape: tuple
    index: np.ndarray
    edges: np.ndarray
    weights: np.ndarray
    beta: float = 50.0

    @property
    def n_vertices(self):
        return len(self.index)

    @property
    def degrees(self):
        d = np.zeros(self.n_vertices)
        np.add.at(d, self.edges[:, 0], self.weights)
        np.add.at(d, self.edges[:, 1], self.weights)
        return d

    def vertex_of(self, coords):
        """Vertex ids for integer voxel coordinates, -1 if not a vertex."""
        flat = np.ravel_multi_index(tuple(np.asarray(coords).reshape(-1, 3).T), self.shape)
        pos = np.searchsorted(self.index, flat)
        pos = np.minimum(pos, len(self.index) - 1)
        return np.where(self.index[pos] == flat, pos, -1)

    def components(self):
        """Connected-component id per vertex and the component count."""
        adj = sparse.coo_matrix(
            (np.ones(len(self.edges)), (self.edges[:, 0], self.edges[:, 1])),
            shape=(self.n_vertices,) * 2,
        )
        n, comp = csgraph.connected_components(adj, directed=False)
        return comp, n


def build_graph(image, mask, beta=50.0, eps_w=WEIGHT_FLOOR):
    """6-connected graph over the foreground voxels of ``mask``."""
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not beta > 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    if not mask.any():
        raise ValueError("empty foreground: nothing to build a graph on")
    vid = np.full(mask.shape, -1, dtype=np.int64)
    index = np.flatnonzero(mask)
    vid.ravel()[index] = np.arange(len(index))

    edges, weights = [], []
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        a, b = vid[tuple(lo)], vid[tuple(hi)]
        both = (a >= 0) & (b >= 0)
        qa, qb = image[tuple(lo)][both], image[tuple(hi)][both]
        edges.append(np.stack([a[both], b[both]], axis=1))
        weights.append(np.exp(-beta * (qa - qb) ** 2) + eps_w)
    edges = np.concatenate(edges)
    weights = np.concatenate(weights)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return VoxelGraph(mask.shape, index, edges[order], weights[order], float(beta))


def laplacian(graph):
    """Combinatorial Laplacian ``D - W`` as CSR; rows sum to zero."""
    n = graph.n_vertices
    i, j = graph.edges[:, 0], graph.edges[:, 1]
    w = graph.weights
    off = sparse.coo_matrix(
        (np.concatenate([-w, -w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
        shape=(n, n),
    ).tocsr()
    # diagonal taken from the assembled rows so the row sums cancel exactly
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sparse.diags(diag)).tocsr()


def laplacian_row_sums(L):
    """Row sums taken as ``diagonal + sum(off-diagonal)``.

    The diagonal is built as minus the off-diagonal sum in stored order, so
    these are exactly 0 for a Laplacian; summing the diagonal somewhere
    inside the row instead can leave round-off of order 1e-17.
    """
    L = sparse.csr_matrix(L)
    diag = L.diagonal()
    off = (L - sparse.diags(diag)).tocsr()
    off.eliminate_zeros()
    return diag + np.asarray(off.sum(axis=1)).ravel()


def pcg(A, b, tol=1e-8, maxiter=2000):
    """Jacobi-preconditioned conjugate gradient for several right-hand sides.

    Each column of ``b`` is an independent system; iteration stops once
    every column satisfies ``||r|| <= tol * ||b||``. Raises
    :class:`ConvergenceError` carrying the worst final relative residual.
    """
    b = np.asarray(b, dtype=np.float64)
    squeeze = b.ndim == 1
    if squeeze:
        b = b[:, None]
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b, axis=0)
    live = bnorm > 0
    if not live.any():
        return x[:, 0] if squeeze else x
    inv_diag = 1.0 / A.diagonal()
    r = b.copy()
    z = inv_diag[:, None] * r
    p = z.copy()
    rz = np.sum(r * z, axis=0)
    safe_bnorm = np.where(live, bnorm, 1.0)
    rel = np.linalg.norm(r, axis=0) / safe_bnorm
    for _ in range(maxiter):
        active = live & (rel > tol)
        if not active.any():
            break
        cols = np.flatnonzero(active)
        Ap = A @ p[:, cols]
        alpha = rz[cols] / np.sum(p[:, cols] * Ap, axis=0)
        x[:, cols] += alpha * p[:, cols]
        r[:, cols] -= alpha * Ap
        z_c = inv_diag[:, None] * r[:, cols]
        rz_new = np.sum(r[:, cols] * z_c, axis=0)
        p[:, cols] = z_c + (rz_new / rz[cols]) * p[:, cols]
        rz[cols] = rz_new
        rel[cols] = np.linalg.norm(r[:, cols], axis=0) / safe_bnorm[cols]
    else:
        if np.any(live & (rel > tol)):
            worst = float(rel[live].max())
            raise ConvergenceError(
                f"conjugate gradient did not converge in {maxiter} iterations "
                f"(relative residual {worst:.3e})",
                residual=worst,
            )
    return x[:, 0] if squeeze else x


def solve_graph_dirichlet(L, seed_vertices, tol=1e-8, maxiter=2000):
    """Random-walker probabilities on one connected graph.

    ``L`` is the Laplacian, ``seed_vertices[j]`` the vertex carrying label
    ``j``. Returns an ``(n, K)`` array; channel ``K-1`` is recovered as the
    complement of the others, then all channels are clamped to [0, 1] and
    renormalized.
    """
    L = sparse.csr_matrix(L)
    n = L.shape[0]
    seed_vertices = np.asarray(seed_vertices, dtype=np.int64)
    K = len(seed_vertices)
    if K == 0:
        raise UnseededComponentError("unseeded component")
    if len(np.unique(seed_vertices)) != K:
        raise ValueError("two labels share a seed vertex")
    probs = np.zeros((n, K))
    probs[seed_vertices, np.arange(K)] = 1.0
    if K == 1:
        probs[:, 0] = 1.0
        return probs
    unlabeled = np.setdiff1d(np.arange(n), seed_vertices)
    if len(unlabeled):
        L_U = L[unlabeled][:, unlabeled].tocsr()
        B_T = L[unlabeled][:, seed_vertices].toarray()
        # p^j is the indicator of seed j, so -B^T p^j is a column of -B^T
        x = pcg(L_U, -B_T[:, : K - 1], tol=tol, maxiter=maxiter)
        x = np.column_stack([x, 1.0 - x.sum(axis=1)])
        np.clip(x, 0.0, 1.0, out=x)
        x /= x.sum(axis=1, keepdims=True)
        probs[unlabeled] = x
    return probs


@dataclass
class ProbabilityField:
    """Arrival probabilities per graph vertex, one channel per seed label.

    ``values[:, j]`` holds label ``j + 1``; a vertex has non-zero mass only on
    the labels seeded inside its own component.
    """

    graph: VoxelGraph
    values: np.ndarray
    component: np.ndarray
    seed_vertices: np.ndarray

    @property
    def K(self):
        return self.values.shape[1]

    def component_labels(self, c):
        """Labels (1-based) of seeds lying in component ``c``."""
        return np.flatnonzero(self.component[self.seed_vertices] == c) + 1

    def channel_volume(self, label):
        vol = np.zeros(self.graph.shape)
        vol.ravel()[self.graph.index] = self.values[:, label - 1]
        return vol


def solve_dirichlet(graph, seeds, tol=1e-8, maxiter=2000, executor=None):
    """Solve the random walker independently on each foreground component.

    Every component must contain at least one seed. ``executor`` (a
    ``concurrent.futures`` executor) may run components concurrently; the
    result does not depend on it.
    """
    coords = seeds.coords if hasattr(seeds, "coords") else np.asarray(seeds)
    K = len(coords)
    if K < 1:
        raise ValueError("at least one seed is required")
    seed_v = graph.vertex_of(coords)
    if np.any(seed_v < 0):
        bad = coords[np.flatnonzero(seed_v < 0)[0]]
        raise ValueError(f"seed {tuple(int(c) for c in bad)} is not a foreground voxel")
    comp, ncomp = graph.components()
    seeded = np.zeros(ncomp, dtype=bool)
    seeded[comp[seed_v]] = True
    if not seeded.all():
        missing = int(np.flatnonzero(~seeded)[0])
        raise UnseededComponentError(f"unseeded component (component {missing} has no seed)")

    L = laplacian(graph)
    values = np.zeros((graph.n_vertices, K))
    order = np.argsort(comp, kind="stable")
    bounds = np.searchsorted(comp[order], np.arange(ncomp + 1))

    def job(c):
        verts = order[bounds[c] : bounds[c + 1]]
        labels = np.flatnonzero(comp[seed_v] == c)
        local = np.searchsorted(verts, seed_v[labels])
        sub = L[verts][:, verts]
        return verts, labels, solve_graph_dirichlet(sub, local, tol, maxiter)

    results = executor.map(job, range(ncomp)) if executor else map(job, range(ncomp))
    for verts, labels, probs in results:
        values[np.ix_(verts, labels)] = probs
    return ProbabilityField(graph, values, comp, seed_v)


def combine_probabilities(values, floor=PROB_FLOOR):
    """Row-wise ``sum_j log(x_j + floor)``: the log of the probability product."""
    return np.sum(np.log(np.asarray(values, dtype=np.float64) + floor), axis=-1)


def response_image(field):
    """Response volume from the probability field.

    Per component with two or more seeds, the log-product of the component's
    channels is rescaled affinely to [0, 1]. Single-seed components and the
    background are 0.
    """
    graph = field.graph
    out = np.zeros(graph.n_vertices)
    seed_comp = field.component[field.seed_vertices]
    for c in np.unique(seed_comp):
        labels = np.flatnonzero(seed_comp == c)
        if len(labels) < 2:
            continue
        verts = np.flatnonzero(field.component == c)
        r = combine_probabilities(field.values[np.ix_(verts, labels)])
        lo, hi = r.min(), r.max()
        out[verts] = (r - lo) / (hi - lo) if hi > lo else 0.0
    vol = np.zeros(graph.shape)
    vol.ravel()[graph.index] = out
    return vol


_STEPS = np.array(
    [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]], dtype=np.int64
)


@numba.njit(cache=True, nogil=True)
def _grow(R, mask, labels, seed_flat, delta):
    nx, ny, nz = R.shape
    heap = [(0.0, np.int64(0))]
    heap.pop()
    for s in range(seed_flat.shape[0]):
        p = seed_flat[s]
        heapq.heappush(heap, (-R.ravel()[p], p))
    flatR = R.ravel()
    flatM = mask.ravel()
    flatL = labels.ravel()
    while len(heap) > 0:
        _, p = heapq.heappop(heap)
        x = p // (ny * nz)
        y = (p // nz) % ny
        z = p % nz
        for k in range(6):
            qx = x + _STEPS[k, 0]
            qy = y + _STEPS[k, 1]
            qz = z + _STEPS[k, 2]
            if qx < 0 or qy < 0 or qz < 0 or qx >= nx or qy >= ny or qz >= nz:
                continue
            q = (qx * ny + qy) * nz + qz
            if flatM[q] and flatL[q] == 0 and flatR[q] >= flatR[p] - delta:
                flatL[q] = flatL[p]
                heapq.heappush(heap, (-flatR[q], q))
    return labels


def grow_seed_regions(R, seeds, mask, delta=0.0):
    """Grow every seed uphill on ``R`` until the ridge.

    A foreground neighbor is admitted when unclaimed and
    ``R[neighbor] >= R[current] - delta``. Voxels are expanded highest-R
    first (ties by raster index), so where two regions meet on a crest the
    first to arrive claims it.
    """
    R = np.ascontiguousarray(R, dtype=np.float64)
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    if R.shape != mask.shape:
        raise ValueError("response and mask shapes differ")
    labels = np.zeros(R.shape, dtype=np.int32)
    coords = seeds.coords if hasattr(seeds, "coords") else np.asarray(seeds).reshape(-1, 3)
    if len(coords) == 0:
        return labels
    flat = np.ravel_multi_index(tuple(coords.T), R.shape).astype(np.int64)
    labels.ravel()[flat] = np.arange(1, len(flat) + 1)
    return _grow(R, mask, labels, flat, float(delta))
