"""Level-set recovery of a two-valued diffusion coefficient.

The coefficient is ``a = a1 H_eps(phi) + a2 (1 - H_eps(phi))`` with ``phi``
evaluated at triangle centroids (the mean of its three nodal values).  The
objective is

    J = 1/2 sum_n w_n sum_i wb_i (u(t_n, y_i) - hbar(t_n, y_i))**2 + beta TV(a),

where ``u`` solves the forward problem with zero initial state and source.
Gradients are exact for this discrete objective: the misfit part comes from
the transposed time stepper and the TV part is differentiated directly.
"""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .errors import InvalidArgumentError, ObjectiveNaNError
from .meshfem import Mesh, assemble_mass, assemble_stiffness, boundary_weights
from .timefrac import FractionalSolver, TimeGrid, trapezoid_time_weights

logger = logging.getLogger(__name__)

__all__ = [
    "heaviside",
    "delta",
    "Disc",
    "Square",
    "Polygon",
    "Union",
    "LevelSetField",
    "init_levelset",
    "CoefficientModel",
    "coeff_from_levelset",
    "InterfaceProblem",
    "Evaluation",
    "reinitialize",
    "RecoveryOptions",
    "RecoveryState",
    "recover_interface",
    "extract_contour",
    "symmetric_difference",
    "write_contours_csv",
    "write_log_csv",
]


def heaviside(x, eps: float):
    return np.arctan(np.asarray(x) / eps) / math.pi + 0.5


def delta(x, eps: float):
    x = np.asarray(x)
    return eps / (math.pi * (x * x + eps * eps))


# ----------------------------------------------------------------- shapes

@dataclass(frozen=True)
class Disc:
    center: tuple
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise InvalidArgumentError(f"disc radius must be positive, got {self.r}")

    def signed_distance(self, x, y):
        return self.r - np.hypot(np.asarray(x) - self.center[0], np.asarray(y) - self.center[1])

    @property
    def area(self) -> float:
        return math.pi * self.r ** 2


@dataclass(frozen=True)
class Square:
    center: tuple
    side: float

    def __post_init__(self):
        if not self.side > 0:
            raise InvalidArgumentError(f"square side must be positive, got {self.side}")

    def signed_distance(self, x, y):
        hx = np.abs(np.asarray(x) - self.center[0]) - 0.5 * self.side
        hy = np.abs(np.asarray(y) - self.center[1]) - 0.5 * self.side
        outside = np.hypot(np.maximum(hx, 0.0), np.maximum(hy, 0.0))
        inside = np.minimum(np.maximum(hx, hy), 0.0)
        return -(outside + inside)

    @property
    def area(self) -> float:
        return self.side ** 2


@dataclass(frozen=True)
class Polygon:
    """Simple polygon, vertices in order; signed distance by edge projection."""

    vertices: tuple

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2 or abs(self._shoelace(v)) == 0.0:
            raise InvalidArgumentError("polygon needs at least three non-collinear vertices")

    @staticmethod
    def _shoelace(v):
        x, y = v[:, 0], v[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    def contains(self, x, y):
        v = np.asarray(self.vertices, dtype=float)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        for (x1, y1), (x2, y2) in zip(v, np.roll(v, -1, axis=0)):
            crosses = (y1 > y) != (y2 > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crosses & (x < xi)
        return inside

    def signed_distance(self, x, y):
        v = np.asarray(self.vertices, dtype=float)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        best = np.full(np.broadcast(x, y).shape, np.inf)
        for p, q in zip(v, np.roll(v, -1, axis=0)):
            e = q - p
            s = np.clip(((x - p[0]) * e[0] + (y - p[1]) * e[1]) / np.dot(e, e), 0.0, 1.0)
            best = np.minimum(best, np.hypot(x - p[0] - s * e[0], y - p[1] - s * e[1]))
        return np.where(self.contains(x, y), best, -best)

    @property
    def area(self) -> float:
        return abs(self._shoelace(np.asarray(self.vertices, dtype=float)))


@dataclass(frozen=True)
class Union:
    parts: tuple

    def __post_init__(self):
        if len(self.parts) == 0:
            raise InvalidArgumentError("union of no shapes")

    def signed_distance(self, x, y):
        return np.max([p.signed_distance(x, y) for p in self.parts], axis=0)

    @property
    def area(self) -> float:
        # exact only for disjoint parts
        return sum(p.area for p in self.parts)


# ----------------------------------------------------------- level sets

@dataclass
class LevelSetField:
    mesh: Mesh
    phi: np.ndarray
    eps: float

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        if self.phi.shape != (self.mesh.n_nodes,):
            raise InvalidArgumentError("level set must have one value per node")
        if not self.eps > 0:
            raise InvalidArgumentError("smoothing width must be positive")

    @property
    def centroid_values(self) -> np.ndarray:
        return self.phi[self.mesh.triangles].mean(axis=1)


def init_levelset(mesh: Mesh, shape, eps: float | None = None) -> LevelSetField:
    """Signed distance to ``shape`` (positive inside) at the mesh nodes."""
    phi = shape.signed_distance(mesh.nodes[:, 0], mesh.nodes[:, 1])
    return LevelSetField(mesh, np.asarray(phi, dtype=float), mesh.h if eps is None else eps)


@dataclass
class CoefficientModel:
    a1: float
    a2: float
    levelset: LevelSetField

    def __post_init__(self):
        if not (self.a1 > 0 and self.a2 > 0):
            raise InvalidArgumentError("a1 and a2 must be positive")


def coeff_from_levelset(model: CoefficientModel) -> np.ndarray:
    """Element coefficient from the level set at triangle centroids."""
    H = heaviside(model.levelset.centroid_values, model.levelset.eps)
    return model.a1 * H + model.a2 * (1.0 - H)


# ------------------------------------------------------------ objective

@dataclass
class Evaluation:
    J: float
    misfit: float
    tv: float
    grad_phi: np.ndarray | None = None  # L2 (lumped) representer, nodal
    grad_phi_euclid: np.ndarray | None = None  # plain partial derivatives
    grad_a1: float = 0.0
    grad_a2: float = 0.0
    grad_a: np.ndarray | None = None  # derivative w.r.t. each element value


class InterfaceProblem:
    """Misfit of boundary data for a given excitation load and reduced data.

    Parameters
    ----------
    mesh, alpha, grid
        Discretization and (already recovered) fractional order.
    loads : ndarray, shape (N+1, n_nodes)
        Neumann load at every time level.
    hbar : ndarray, shape (N+1, n_boundary)
        Reduced (or excitation-only) boundary data.
    beta : float
        Weight of the total-variation term.
    observed : array of bool, optional
        Mask of boundary nodes where data are available (default all).
    eps : float, optional
        Width of the smoothed Heaviside (default ``h``).
    misfit : {"l2", "nodal"}
        ``"l2"`` weights residuals by the trapezoid rules in time and along
        the boundary; ``"nodal"`` sums squared residuals over all boundary
        nodes and time levels, which fixes the scale on which ``beta`` acts.
    """

    def __init__(self, mesh: Mesh, alpha: float, grid: TimeGrid, loads, hbar, beta: float = 0.0,
                 observed=None, eps: float | None = None, misfit: str = "l2"):
        self.mesh = mesh
        self.alpha = float(alpha)
        self.grid = grid
        self.loads = np.asarray(loads, dtype=float)
        self.hbar = np.asarray(hbar, dtype=float)
        nb = len(mesh.boundary_nodes)
        if self.loads.shape != (grid.N + 1, mesh.n_nodes):
            raise InvalidArgumentError("loads must have shape (N+1, n_nodes)")
        if self.hbar.shape != (grid.N + 1, nb):
            raise InvalidArgumentError("data must have shape (N+1, n_boundary)")
        self.beta = float(beta)
        self.observed = np.ones(nb, dtype=bool) if observed is None else np.asarray(observed, dtype=bool)
        self.eps = mesh.h if eps is None else float(eps)
        if misfit == "l2":
            self.time_weights = trapezoid_time_weights(grid)
            self.space_weights = boundary_weights(mesh)
        elif misfit == "nodal":
            self.time_weights = np.ones(grid.N + 1)
            self.space_weights = np.ones(nb)
        else:
            raise InvalidArgumentError(f"unknown misfit {misfit!r}")
        self.misfit = misfit
        self.n_solves = 0

    # TV of the nodal lift a_i = a1 H(phi_i) + a2 (1 - H(phi_i))
    def _tv(self, phi, a1, a2, want_grad):
        mesh = self.mesh
        eps_tv = 1e-8 * max(abs(a2 - a1), 1e-12) / mesh.h
        Hn = heaviside(phi, self.eps)
        an = a1 * Hn + a2 * (1.0 - Hn)
        g = mesh.gradient(an)
        mag = np.sqrt(np.sum(g * g, axis=1) + eps_tv ** 2)
        tv = float(np.sum(mesh.areas * mag))
        if not want_grad:
            return tv, None
        flux = (mesh.areas / mag)[:, None] * g  # (T, 2)
        local = np.einsum("td,tkd->tk", flux, mesh.basis_gradients)
        dan = np.zeros(mesh.n_nodes)
        np.add.at(dan, mesh.triangles.ravel(), local.ravel())
        dphi = dan * (a1 - a2) * delta(phi, self.eps)
        return tv, (dphi, float(dan @ Hn), float(dan @ (1.0 - Hn)))

    def forward(self, a):
        solver = FractionalSolver(self.mesh, a, self.alpha, self.grid)
        self.n_solves += 1
        return solver, solver.forward(loads=self.loads)

    def residual(self, U):
        r = U[:, self.mesh.boundary_nodes] - self.hbar
        return r * self.observed[None, :]

    def evaluate(self, phi, a1: float, a2: float, gradient: bool = True) -> Evaluation:
        mesh = self.mesh
        phi = np.asarray(phi, dtype=float)
        if not np.all(np.isfinite(phi)):
            raise ObjectiveNaNError("level set is not finite", {"phi": phi.copy(), "a1": a1, "a2": a2})
        model = CoefficientModel(a1, a2, LevelSetField(mesh, phi, self.eps))
        a = coeff_from_levelset(model)
        solver, U = self.forward(a)
        r = self.residual(U)
        misfit = 0.5 * float(self.time_weights @ ((r ** 2) @ self.space_weights))
        tv, tv_grad = self._tv(phi, a1, a2, gradient and self.beta > 0) if self.beta > 0 else (0.0, None)
        J = misfit + self.beta * tv
        if not np.isfinite(J):
            raise ObjectiveNaNError("objective is not finite", {"phi": phi.copy(), "a1": a1, "a2": a2})
        ev = Evaluation(J, misfit, tv)
        if not gradient:
            return ev
        V = solver.adjoint(solver.boundary_cotangent(r, self.time_weights, self.space_weights))
        da = solver.coefficient_gradient(U, V)
        pc = model.levelset.centroid_values
        H = heaviside(pc, self.eps)
        per_elem = da * (a1 - a2) * delta(pc, self.eps) / 3.0
        gphi = np.zeros(mesh.n_nodes)
        np.add.at(gphi, mesh.triangles.ravel(), np.repeat(per_elem, 3))
        g1 = float(da @ H)
        g2 = float(da @ (1.0 - H))
        if tv_grad is not None:
            gphi += self.beta * tv_grad[0]
            g1 += self.beta * tv_grad[1]
            g2 += self.beta * tv_grad[2]
        ev.grad_phi_euclid = gphi
        ev.grad_phi = gphi / mesh.lumped_node_areas
        ev.grad_a1, ev.grad_a2, ev.grad_a = g1, g2, da
        return ev


# ---------------------------------------------------------- redistancing

def _interface_nodes(mesh: Mesh, phi):
    """Nodes of triangles on which ``phi`` changes sign (or vanishes)."""
    v = phi[mesh.triangles]
    cut = (v.max(axis=1) >= 0.0) & (v.min(axis=1) <= 0.0)
    mark = np.zeros(mesh.n_nodes, dtype=bool)
    mark[mesh.triangles[cut].ravel()] = True
    return mark, cut


def _godunov(d, s0, h):
    """Upwind ``|grad d|`` on a uniform grid indexed ``[j, i]``."""
    p = np.pad(d, 1, mode="edge")
    # linear extrapolation into the ghost layer
    p[0, :] = 2 * p[1, :] - p[2, :]
    p[-1, :] = 2 * p[-2, :] - p[-3, :]
    p[:, 0] = 2 * p[:, 1] - p[:, 2]
    p[:, -1] = 2 * p[:, -2] - p[:, -3]
    c = p[1:-1, 1:-1]
    a = (c - p[1:-1, :-2]) / h  # backward x
    b = (p[1:-1, 2:] - c) / h  # forward x
    cc = (c - p[:-2, 1:-1]) / h  # backward y
    dd = (p[2:, 1:-1] - c) / h  # forward y
    pos = np.sqrt(np.maximum(np.maximum(a, 0) ** 2, np.minimum(b, 0) ** 2)
                  + np.maximum(np.maximum(cc, 0) ** 2, np.minimum(dd, 0) ** 2))
    neg = np.sqrt(np.maximum(np.minimum(a, 0) ** 2, np.maximum(b, 0) ** 2)
                  + np.maximum(np.minimum(cc, 0) ** 2, np.maximum(dd, 0) ** 2))
    return np.where(s0 > 0, pos, neg)


def slope_defect(mesh: Mesh, phi, exclude_interface: bool = True) -> float:
    """RMS of ``|grad phi| - 1`` over elements (optionally away from the contour)."""
    g = np.linalg.norm(mesh.gradient(phi), axis=1)
    if exclude_interface:
        mark, _ = _interface_nodes(mesh, phi)
        keep = ~mark[mesh.triangles].any(axis=1)
    else:
        keep = np.ones(mesh.n_triangles, dtype=bool)
    if not np.any(keep):
        return 0.0
    return float(np.sqrt(np.mean((g[keep] - 1.0) ** 2)))


def reinitialize(ls: LevelSetField, max_sweeps: int = 200, tol: float = 0.1,
                 cfl: float = 0.5) -> LevelSetField:
    """Redistance ``phi`` by pseudo-time steps of ``d_t + sign(d0)(|grad d| - 1) = 0``.

    Nodes of triangles crossed by the zero contour are fixed to
    ``phi / |grad phi|`` so the contour stays inside its triangles.
    Iteration stops once the RMS slope defect away from the contour is at
    most ``tol``; after ``max_sweeps`` the last iterate is returned with a
    warning.
    """
    mesh = ls.mesh
    h = mesh.h
    phi0 = ls.phi
    mark, _ = _interface_nodes(mesh, phi0)
    # nodal slope from adjacent element gradients
    g = np.linalg.norm(mesh.gradient(phi0), axis=1)
    acc = np.zeros(mesh.n_nodes)
    np.add.at(acc, mesh.triangles.ravel(), np.repeat(g * mesh.areas, 3))
    slope = acc / (3.0 * mesh.lumped_node_areas)
    fixed = np.where(slope > 1e-12, phi0 / np.maximum(slope, 1e-12), phi0)
    d = phi0.copy()
    d[mark] = fixed[mark]
    s0 = mesh.grid(phi0 / np.sqrt(phi0 ** 2 + h ** 2))
    frozen = mesh.grid(mark)
    D = mesh.grid(d).copy()
    dt = cfl * h
    for sweep in range(max_sweeps + 1):
        cur = D.ravel()
        if slope_defect(mesh, cur) <= tol:
            return LevelSetField(mesh, cur.copy(), ls.eps)
        if sweep == max_sweeps:
            break
        G = _godunov(D, s0, h)
        D = np.where(frozen, D, D - dt * s0 * (G - 1.0))
    warnings.warn("reinitialization did not reach the slope tolerance", RuntimeWarning, stacklevel=2)
    return LevelSetField(mesh, D.ravel().copy(), ls.eps)


# --------------------------------------------------------------- contours

def extract_contour(mesh: Mesh, phi) -> np.ndarray:
    """Zero-contour segments by marching triangles, shape ``(k, 2, 2)``."""
    segs = []
    P = mesh.nodes
    for tri in mesh.triangles:
        v = phi[tri]
        pts = []
        for a, b in ((0, 1), (1, 2), (2, 0)):
            va, vb = v[a], v[b]
            if (va > 0) != (vb > 0):
                s = va / (va - vb)
                pts.append(P[tri[a]] + s * (P[tri[b]] - P[tri[a]]))
        if len(pts) == 2:
            segs.append(pts)
    return np.array(segs).reshape(-1, 2, 2)


def symmetric_difference(mesh: Mesh, phi, shape) -> float:
    """Area of the mismatch between ``{phi > 0}`` and ``shape`` by centroid classification."""
    c = mesh.centroids
    est = phi[mesh.triangles].mean(axis=1) > 0
    true = shape.signed_distance(c[:, 0], c[:, 1]) > 0
    return float(mesh.areas[est != true].sum())


# ------------------------------------------------------------------- loop

@dataclass
class RecoveryOptions:
    iterations: int = 100
    gamma: float = 1.0
    gamma1: float = 0.0
    gamma2: float = 0.0
    monotone: bool = False
    max_halvings: int = 20
    reinit_threshold: float = 0.10
    snapshot_every: int = 100
    grad_tol: float = 0.0
    reinit: bool = True
    # scale each step so the largest nodal change is gamma * h
    normalize: bool = False
    # descent direction: "l2" (lumped mass) or "h1" (smoothed, length h1_length)
    metric: str = "l2"
    h1_length: float = 0.0


@dataclass
class RecoveryState:
    iteration: int
    phi: np.ndarray
    a1: float
    a2: float
    J: float
    gamma: float
    phi_reinit: np.ndarray
    history: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    stop_reason: str = ""


def _l2(mesh, v):
    return float(np.sqrt(np.dot(mesh.lumped_node_areas, v * v)))


def recover_interface(problem: InterfaceProblem, phi0, a1: float, a2: float,
                      options: RecoveryOptions | None = None, callback=None) -> RecoveryState:
    """Gradient descent on the level set (and optionally ``a1``, ``a2``).

    Each iteration takes ``phi <- phi - gamma * grad`` with the lumped-L2
    gradient, then updates ``a_j`` with gradients evaluated at the new
    ``phi``.  The level set is redistanced once it has moved by more than
    ``reinit_threshold`` (relative L2) since the last redistancing.  With
    ``monotone`` set, a step that raises ``J`` is retried with halved
    ``gamma``; a redistancing that raises ``J`` is skipped.
    """
    opt = options or RecoveryOptions()
    mesh = problem.mesh
    if opt.metric not in ("l2", "h1"):
        raise InvalidArgumentError(f"unknown metric {opt.metric!r}")
    riesz = None
    if opt.metric == "h1":
        ell = opt.h1_length or 2.0 * mesh.h
        riesz = spla.factorized((assemble_mass(mesh) + ell ** 2 * assemble_stiffness(mesh, 1.0)).tocsc())

    def direction(ev):
        return ev.grad_phi if riesz is None else riesz(ev.grad_phi_euclid)
    phi = np.asarray(phi0, dtype=float).copy()
    ev = problem.evaluate(phi, a1, a2)
    state = RecoveryState(0, phi, a1, a2, ev.J, opt.gamma, phi.copy())
    state.snapshots.append((0, extract_contour(mesh, phi)))

    def log(k, ev, reinit, gamma):
        gnorm = _l2(mesh, ev.grad_phi) if ev.grad_phi is not None else float("nan")
        state.history.append({"iter": k, "J": ev.J, "misfit": ev.misfit, "tv": ev.tv, "grad_norm": gnorm,
                              "a1": state.a1, "a2": state.a2, "reinit_flag": int(reinit), "gamma": gamma})

    log(0, ev, False, opt.gamma)
    for k in range(1, opt.iterations + 1):
        if opt.grad_tol > 0 and _l2(mesh, ev.grad_phi) <= opt.grad_tol:
            state.stop_reason = "gradient tolerance"
            break
        gamma = opt.gamma
        step = direction(ev)
        if opt.normalize:
            gmax = float(np.max(np.abs(step)))
            gamma = opt.gamma * mesh.h / gmax if gmax > 0 else 0.0
        accepted = None
        for _ in range(opt.max_halvings + 1 if opt.monotone else 1):
            trial = phi - gamma * step
            b1, b2 = state.a1, state.a2
            if opt.gamma1 or opt.gamma2:
                mid = problem.evaluate(trial, b1, b2)
                b1 = max(b1 - opt.gamma1 * mid.grad_a1, 1e-8)
                b2 = max(b2 - opt.gamma2 * mid.grad_a2, 1e-8)
            reinit = False
            cand = trial
            if opt.reinit:
                ref = state.phi_reinit
                if _l2(mesh, trial - ref) > opt.reinit_threshold * _l2(mesh, ref):
                    with warnings.catch_warnings(record=True) as caught:
                        warnings.simplefilter("always")
                        cand = reinitialize(LevelSetField(mesh, trial, problem.eps)).phi
                    if caught:
                        logger.debug("iteration %d: %s", k, caught[0].message)
                    reinit = True
            new = problem.evaluate(cand, b1, b2)
            if reinit and opt.monotone and new.J > ev.J:
                # redistancing spoiled the step; try the plain update
                plain = problem.evaluate(trial, b1, b2)
                if plain.J <= ev.J:
                    cand, new, reinit = trial, plain, False
            if not opt.monotone or new.J <= ev.J:
                accepted = (cand, new, reinit, b1, b2)
                break
            gamma *= 0.5
        if accepted is None:
            state.stop_reason = "no descent step found"
            break
        phi, ev, reinit, state.a1, state.a2 = accepted
        if reinit:
            state.phi_reinit = phi.copy()
        state.phi, state.J, state.gamma, state.iteration = phi, ev.J, gamma, k
        log(k, ev, reinit, gamma)
        if opt.snapshot_every and k % opt.snapshot_every == 0:
            state.snapshots.append((k, extract_contour(mesh, phi)))
        if callback is not None:
            callback(state)
    else:
        state.stop_reason = "iteration budget"
    if not state.snapshots or state.snapshots[-1][0] != state.iteration:
        state.snapshots.append((state.iteration, extract_contour(mesh, state.phi)))
    return state


def write_contours_csv(path, snapshots) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iter", "segment_id", "x", "y"])
        for it, segs in snapshots:
            for s, seg in enumerate(segs):
                for x, y in seg:
                    wr.writerow([it, s, f"{x:.10g}", f"{y:.10g}"])


def write_log_csv(path, history) -> None:
    cols = ["iter", "J", "misfit", "tv", "grad_norm", "a1", "a2", "reinit_flag", "gamma"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for row in history:
            wr.writerow([row[c] for c in cols])
