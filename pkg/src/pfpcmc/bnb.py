"""Branch-and-bound over eigenvector disjunctions (strategy S2).

Each node solves the sparse-PSD relaxation of the power-flow-embedded
projection model plus the interval cuts collected on the way down.  A cut on
direction ``z`` and column ``i`` keeps ``t = U_i' z`` inside ``[a, b]`` and
over-estimates ``t^2`` by its secant on that interval,

    z' Y z <= (a + b) t - a b,

which every point with ``Y = U U'`` and ``t`` in ``[a, b]`` satisfies since
``(a + b) t - a b - t^2 = (t - a)(b - t) >= 0``.  For ``k > 1`` the cut on a
direction sums the secants of all columns, columns without an interval on
that direction using ``[-1, 1]`` (valid because ``Y = U U' <= I`` forces
``|U_i' z| <= 1``).

With ``k = 1`` and a sparse plan, ``Y`` is only determined on the entries
the principal blocks touch, and the projection constraint is imposed clique
by clique (see :func:`pfpcmc.models.reduce_rank_one`).  Branching directions
are then taken from the clique blocks of ``Y - U U'``, so every cut stays
inside a clique and the node programs keep only small cones.
"""

from __future__ import annotations

import heapq
import itertools
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .conic import Affine, ConicProgram, SolveSettings
from .measgen import Scenario
from .models import (
    EstimationResult,
    ModelError,
    PowerFlowToleranceSet,
    SlackData,
    SubmatrixPlan,
    apply_sparse_psd,
    build_model_pfpc,
    extract_state,
    reduce_rank_one,
    select_submatrices,
)

__all__ = [
    "IntervalCut",
    "BnbNode",
    "BnbIncumbent",
    "BnbLimits",
    "BnbStats",
    "DegenerateIntervalError",
    "secant_cut",
    "branch",
    "add_cuts",
    "bnb_solve",
]

TIE_TOL = 1e-9
_BOX_TOL = 1e-9


class DegenerateIntervalError(ValueError):
    """Raised when an interval is too narrow to split."""


@dataclass(frozen=True)
class IntervalCut:
    """``lower <= U[:, column]' z <= upper`` plus its secant over-estimate.

    ``direction`` identifies ``z`` so that cuts sharing a direction can be
    summed for ``k > 1``.
    """

    column: int
    z: np.ndarray
    lower: float
    upper: float
    direction: int = 0

    def secant(self, t):
        """``(a + b) t - a b``."""
        return (self.lower + self.upper) * t - self.lower * self.upper

    def slack(self, t: float) -> float:
        """Secant minus ``t^2``: ``(t - a)(b - t)``."""
        return (t - self.lower) * (self.upper - t)

    def holds(self, Y: np.ndarray, U: np.ndarray, tol: float = 1e-9) -> bool:
        """Box and single-column secant check at a point (``k = 1`` form)."""
        t = float(U[:, self.column] @ self.z)
        if t < self.lower - tol or t > self.upper + tol:
            return False
        return float(self.z @ Y @ self.z) <= self.secant(t) + tol

    def to_dict(self) -> dict:
        nz = np.flatnonzero(self.z)
        return {
            "column": self.column,
            "direction": self.direction,
            "lower": self.lower,
            "upper": self.upper,
            "support": nz.tolist(),
            "z": self.z[nz].tolist(),
        }


def secant_cut(z, interval, column: int = 0, direction: int = 0) -> IntervalCut:
    """Interval cut on ``U[:, column]' z``; ``z`` is normalised to unit length."""
    a, b = (float(v) for v in interval)
    if a > b:
        raise ValueError(f"empty interval [{a}, {b}]")
    if a < -1.0 - _BOX_TOL or b > 1.0 + _BOX_TOL:
        raise ValueError(f"interval [{a}, {b}] leaves [-1, 1]")
    z = np.asarray(z, dtype=float).ravel()
    nrm = np.linalg.norm(z)
    if not nrm > 0:
        raise ValueError("cut direction must be nonzero")
    return IntervalCut(int(column), z / nrm, max(a, -1.0), min(b, 1.0), int(direction))


@dataclass
class BnbNode:
    id: int
    cuts: tuple = ()
    parent: int | None = None
    parent_bound: float = -np.inf
    depth: int = 0
    bound: float = np.nan  # max(parent bound, own relaxation value)
    raw_bound: float = np.nan
    residual: float = np.nan
    Y: np.ndarray | None = None
    U: np.ndarray | None = None

    def interval(self, column: int, direction: int) -> tuple:
        for c in self.cuts:
            if c.column == column and c.direction == direction:
                return c.lower, c.upper
        return -1.0, 1.0


@dataclass
class BnbIncumbent:
    objective: float
    X: np.ndarray
    Y: np.ndarray
    U: np.ndarray
    Theta: np.ndarray
    tolerances: dict
    node: int
    residual: float = 0.0
    result: EstimationResult | None = None


@dataclass(frozen=True)
class BnbLimits:
    max_nodes: int = 50
    time_limit: float = 600.0
    gap: float = 1e-3  # relative
    eps_proj: float = 1e-4  # Frobenius norm of Y - U U'
    termination: str = "residual"  # or "gap"

    def __post_init__(self):
        if self.max_nodes < 1 or not self.time_limit > 0 or self.gap < 0 or not self.eps_proj > 0:
            raise ValueError("B&B limits must be positive")
        if self.termination not in ("residual", "gap"):
            raise ValueError(f"unknown termination rule {self.termination!r}")


@dataclass
class BnbStats:
    status: str = "running"  # optimal | node-limit | time-limit | bound-only
    nodes: int = 0
    max_depth: int = 0
    wall_time: float = 0.0
    bound: float = np.nan
    incumbent: float = np.nan
    gap: float = np.nan
    incumbent_node: int | None = None
    fathomed: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# cuts and branching


def add_cuts(prog: ConicProgram, cuts, k: int) -> list:
    """Add box and (summed) secant constraints for ``cuts``; returns handles."""
    Y, U = prog["Y"], prog["U"]
    handles = []
    by_dir: dict = {}
    for c in cuts:
        by_dir.setdefault(c.direction, []).append(c)
    for d, group in sorted(by_dir.items()):
        z = group[0].z
        sup = np.flatnonzero(z)
        zs = z[sup]
        quad = (Y[np.ix_(sup, sup)] * np.outer(zs, zs)).sum()
        rhs = Affine.wrap(0.0)
        cols = {c.column: c for c in group}
        for i in range(k):
            t = (U[sup, i] * zs).sum()
            if i in cols:
                c = cols[i]
                rhs = rhs + c.secant(t)
                handles.append(prog.add_le(t, c.upper, name=f"box:{d}:{i}:upper"))
                handles.append(prog.add_le(c.lower, t, name=f"box:{d}:{i}:lower"))
            else:
                rhs = rhs + 1.0
        handles.append(prog.add_le(quad, rhs, name=f"secant:{d}"))
    return handles


def _canonical_sign(z: np.ndarray) -> np.ndarray:
    j = int(np.argmax(np.abs(z)))
    return -z if z[j] < 0 else z


def _leading_direction(D: np.ndarray, cliques=None) -> tuple:
    """Unit vector for the largest-magnitude eigenvalue of ``D`` (or of its clique blocks)."""
    n = D.shape[0]
    if cliques is None:
        w, V = np.linalg.eigh(0.5 * (D + D.T))
        j = int(np.argmax(np.abs(w)))
        return _canonical_sign(V[:, j]), float(w[j])
    best = (-1.0, None, 0.0)
    for c in cliques:
        blk = D[np.ix_(c, c)]
        w, V = np.linalg.eigh(0.5 * (blk + blk.T))
        j = int(np.argmax(np.abs(w)))
        if abs(w[j]) > best[0]:
            z = np.zeros(n)
            z[c] = V[:, j]
            best = (abs(w[j]), z, float(w[j]))
    return _canonical_sign(best[1]), best[2]


def branch(
    node: BnbNode,
    Y_hat: np.ndarray,
    U_hat: np.ndarray,
    cliques=None,
    ids=None,
    directions: list | None = None,
    eps_proj: float = 0.0,
) -> tuple:
    """Split ``node`` on the eigen-direction of ``Y_hat - U_hat U_hat'``.

    ``directions`` is the shared registry of cut directions (list of unit
    vectors); a direction parallel to a registered one reuses its id, so
    repeated branching narrows the same interval.  ``cliques`` restricts the
    eigen-direction to principal clique blocks.
    """
    U_hat = np.asarray(U_hat, dtype=float).reshape(Y_hat.shape[0], -1)
    D = Y_hat - U_hat @ U_hat.T
    if cliques is not None:
        mask = np.zeros(D.shape, dtype=bool)
        for c in cliques:
            mask[np.ix_(c, c)] = True
        resid = float(np.linalg.norm(D[mask]))
    else:
        resid = float(np.linalg.norm(D))
    if resid <= eps_proj:
        raise ValueError("node already satisfies the projection residual tolerance")
    z, _ = _leading_direction(D, cliques)
    if directions is None:
        directions = []
    did = None
    for j, old in enumerate(directions):
        if abs(abs(float(old @ z)) - 1.0) < 1e-9:
            did, z = j, old
            break
    if did is None:
        directions.append(z)
        did = len(directions) - 1
    k = U_hat.shape[1]
    t_all = U_hat.T @ z
    slacks = []
    for i in range(k):
        a, b = node.interval(i, did)
        t = min(max(float(t_all[i]), a), b)
        slacks.append((t - a) * (b - t))
    col = int(np.argmax(slacks)) if k > 1 else 0
    a, b = node.interval(col, did)
    if b - a < TIE_TOL:
        raise DegenerateIntervalError(f"interval [{a}, {b}] exhausted")
    t = min(max(float(t_all[col]), a), b)
    if t - a < TIE_TOL or b - t < TIE_TOL:
        t = 0.5 * (a + b)
    keep = tuple(c for c in node.cuts if not (c.column == col and c.direction == did))
    ids = ids if ids is not None else itertools.count(node.id + 1)
    children = []
    for lo, hi in ((a, t), (t, b)):
        cut = secant_cut(z, (lo, hi), column=col, direction=did)
        children.append(
            BnbNode(
                id=next(ids),
                cuts=keep + (cut,),
                parent=node.id,
                parent_bound=node.bound,
                depth=node.depth + 1,
            )
        )
    return children[0], children[1]


# ---------------------------------------------------------------------------
# search


def _complete_rank_k(Y: np.ndarray, mask: np.ndarray, k: int, iters: int = 200) -> np.ndarray:
    """Fill entries outside ``mask`` by alternating rank-k projections."""
    Z = np.where(mask, Y, 0.0)
    for _ in range(iters):
        w, V = np.linalg.eigh(Z)
        L = (V[:, -k:] * w[-k:]) @ V[:, -k:].T
        nxt = np.where(mask, Y, L)
        if np.linalg.norm(nxt - Z) <= 1e-10 * max(1.0, np.linalg.norm(Z)):
            Z = nxt
            break
        Z = nxt
    return Z


def _round_projection(Y: np.ndarray, k: int, mask: np.ndarray | None) -> np.ndarray:
    """Orthonormal ``U`` spanning the top-k eigenspace of (a completion of) ``Y``."""
    if mask is not None and not mask.all():
        Y = _complete_rank_k(Y, mask, k)
    w, V = np.linalg.eigh(0.5 * (Y + Y.T))
    return V[:, ::-1][:, :k].copy()


def _fixed_program(base: ConicProgram, U0: np.ndarray) -> ConicProgram:
    """``base`` with ``Y = U0 U0'`` and ``U = U0`` pinned (a feasible rank-k point)."""
    prog = base.copy()
    for key in ("YU", "I-Y"):
        h = prog.meta.get(key)
        if h is not None and h in prog.constraints:
            prog.remove(h)
    for h in prog.meta.get("YU_blocks") or []:
        if h in prog.constraints:
            prog.remove(h)
    for h, c in list(prog.constraints.items()):
        if c.name in ("U=0", "Y:unused"):
            prog.remove(h)
    Y, U = prog["Y"], prog["U"]
    n = Y.shape[0]
    iu = np.triu_indices(n)
    prog.add_zero(Y[iu] - (U0 @ U0.T)[iu], name="Y=UU'")
    prog.add_zero(U - U0, name="U fixed")
    prog.name = base.name + "+fixed"
    return prog


class _Search:
    def __init__(self, scenario, base, root_prog, k, limits, settings, cliques, trace_fh):
        self.scn = scenario
        self.base = base  # S1 (or full) program, no reduction, used for incumbents
        self.root = root_prog  # node template (possibly clique-reduced)
        self.k = k
        self.limits = limits
        self.settings = settings
        self.cliques = cliques
        self.mask = None
        if cliques is not None:
            n = scenario.n
            self.mask = np.zeros((n, n), dtype=bool)
            for c in cliques:
                self.mask[np.ix_(c, c)] = True
        self.trace_fh = trace_fh
        self.stats = BnbStats()
        self.incumbent: BnbIncumbent | None = None
        self.best_relax = None  # (objective, report, prog)
        self.directions: list = []
        self.ids = itertools.count(1)
        self.t0 = time.perf_counter()
        self.seen_rounding: list = []

    # -- helpers --------------------------------------------------------
    def elapsed(self) -> float:
        return time.perf_counter() - self.t0

    def residual(self, Y, U) -> float:
        D = Y - U @ U.T
        return float(np.linalg.norm(D[self.mask] if self.mask is not None else D))

    def log(self, node: BnbNode, action: str, **extra):
        rec = {
            "node": node.id,
            "parent": node.parent,
            "depth": node.depth,
            "bound": _num(node.bound),
            "raw_bound": _num(node.raw_bound),
            "parent_bound": _num(node.parent_bound),
            "residual": _num(node.residual),
            "action": action,
            "incumbent": _num(self.incumbent.objective if self.incumbent else np.nan),
            "time": round(self.elapsed(), 4),
        }
        rec.update(extra)
        self.stats.trace.append(rec)
        if action.startswith("fathom"):
            self.stats.fathomed[action] = self.stats.fathomed.get(action, 0) + 1
        if self.trace_fh is not None:
            self.trace_fh.write(json.dumps(rec) + "\n")
            self.trace_fh.flush()

    def solve_node(self, node: BnbNode):
        prog = self.root.copy()
        if node.cuts:
            add_cuts(prog, node.cuts, self.k)
        settings = self._settings()
        rep = conic.solve(prog, settings)
        self.stats.nodes += 1
        self.stats.max_depth = max(self.stats.max_depth, node.depth)
        return prog, rep

    def _settings(self) -> SolveSettings:
        left = self.limits.time_limit - self.elapsed()
        s = self.settings
        return SolveSettings(
            feas_tol=s.feas_tol,
            gap_tol=s.gap_tol,
            time_limit=max(left, 1.0) if s.time_limit is None else min(s.time_limit, max(left, 1.0)),
            max_iter=s.max_iter,
            backend=s.backend,
            verbose=s.verbose,
            check_factor=s.check_factor,
            objective_scale=s.objective_scale,
        )

    def try_incumbent(self, node: BnbNode, Y: np.ndarray):
        U0 = _round_projection(Y, self.k, self.mask)
        for old in self.seen_rounding:
            if np.linalg.norm(old @ old.T - U0 @ U0.T) < 1e-9:
                return
        self.seen_rounding.append(U0)
        prog = _fixed_program(self.base, U0)
        rep = conic.solve(prog, self._settings())
        if not rep.ok:
            return
        if self.incumbent is None or rep.objective < self.incumbent.objective:
            res = extract_state(rep, prog, self.scn.meas, self.scn.v_true)
            self.incumbent = BnbIncumbent(
                objective=rep.objective,
                X=res.X,
                Y=U0 @ U0.T,
                U=U0,
                Theta=prog["Theta"].value(rep.x),
                tolerances=res.tolerances,
                node=node.id,
                residual=0.0,
                result=res,
            )
            self.stats.incumbent_node = node.id

    def evaluate(self, node: BnbNode) -> bool:
        """Solve ``node``; returns True when it stays open."""
        prog, rep = self.solve_node(node)
        if rep.status == "primal-infeasible":
            self.log(node, "fathom-infeasible")
            return False
        if not rep.ok:
            self.log(node, "fathom-failed", status=rep.status)
            return False
        node.raw_bound = rep.objective
        node.bound = max(rep.objective, node.parent_bound)
        node.Y = prog["Y"].value(rep.x)
        node.U = np.asarray(prog["U"].value(rep.x)).reshape(self.scn.n, self.k)
        node.residual = self.residual(node.Y, node.U)
        if self.best_relax is None or node.id == 0:
            self.best_relax = (rep, prog)
        self.try_incumbent(node, node.Y)
        if node.residual <= self.limits.eps_proj:
            self.log(node, "fathom-residual")
            return False
        if self.incumbent is not None and node.bound >= self.incumbent.objective - self._gap_abs():
            self.log(node, "fathom-bound")
            return False
        return True

    def _gap_abs(self) -> float:
        inc = self.incumbent.objective
        tol = self.limits.gap if self.limits.termination == "gap" else 1e-9
        return tol * max(1.0, abs(inc))

    def run(self) -> BnbStats:
        root = BnbNode(id=0)
        heap: list = []
        if self.evaluate(root):
            heapq.heappush(heap, (root.bound, root.id, root))
            self.log(root, "open")
        status = "optimal"
        while heap:
            bound, _, node = heapq.heappop(heap)
            if self.incumbent is not None and bound >= self.incumbent.objective - self._gap_abs():
                self.log(node, "fathom-bound")
                for _, _, other in heap:
                    self.log(other, "fathom-bound")
                heap = []
                break
            if self.stats.nodes >= self.limits.max_nodes:
                status = "node-limit"
                heapq.heappush(heap, (bound, node.id, node))
                break
            if self.elapsed() >= self.limits.time_limit:
                status = "time-limit"
                heapq.heappush(heap, (bound, node.id, node))
                break
            try:
                left, right = branch(
                    node,
                    node.Y,
                    node.U,
                    cliques=self.cliques,
                    ids=self.ids,
                    directions=self.directions,
                )
            except DegenerateIntervalError:
                self.log(node, "fathom-degenerate")
                continue
            self.log(node, "branch", children=[left.id, right.id])
            for child in (left, right):
                if self.stats.nodes >= self.limits.max_nodes or self.elapsed() >= self.limits.time_limit:
                    child.bound = node.bound
                    heapq.heappush(heap, (child.bound, child.id, child))
                    continue
                if self.evaluate(child):
                    heapq.heappush(heap, (child.bound, child.id, child))
                    self.log(child, "open")
        open_bounds = [b for b, _, _ in heap]
        st = self.stats
        st.wall_time = self.elapsed()
        if self.incumbent is None:
            st.status = "bound-only"
        else:
            st.status = status
            st.incumbent = self.incumbent.objective
        best_open = min(open_bounds) if open_bounds else np.inf
        if self.incumbent is not None:
            st.bound = min(best_open, self.incumbent.objective)
            st.gap = (self.incumbent.objective - st.bound) / max(1.0, abs(self.incumbent.objective))
        else:
            st.bound = best_open
        return st


def _num(x):
    return None if x is None or not np.isfinite(x) else float(x)


def bnb_solve(
    scenario: Scenario,
    k: int = 1,
    lam: float = 10.0,
    plan: SubmatrixPlan | None = None,
    tol: PowerFlowToleranceSet | None = None,
    limits: BnbLimits | None = None,
    settings: SolveSettings | None = None,
    node_model: str = "s1",
    fit_scaling="noise",
    reduce: bool = True,
    trace=None,
) -> tuple:
    """Strategy S2 on ``scenario``; returns ``(EstimationResult, BnbStats)``.

    ``node_model="s1"`` (default) solves the sparse-PSD relaxation at every
    node; ``"full"`` keeps the whole PSD block (the original scheme, for
    comparison).  ``trace`` may be a path or a writable text file; one JSON
    record per node event is written.
    """
    limits = limits or BnbLimits()
    settings = settings or SolveSettings()
    tol = tol or PowerFlowToleranceSet()
    if node_model not in ("s1", "full"):
        raise ModelError(f"node_model must be 's1' or 'full', got {node_model!r}")
    base = build_model_pfpc(
        scenario.meas, scenario.lpf, SlackData.from_scenario(scenario), k=k, lam=lam, tol=tol, fit_scaling=fit_scaling
    )
    if node_model == "s1":
        if plan is None:
            plan = select_submatrices(scenario.n, scenario.case.adjacency(), 5)
        base = apply_sparse_psd(base, plan)
    root_prog = base
    cliques = None
    if reduce and k == 1:
        root_prog = reduce_rank_one(base, keep_u=True)
        cliques = root_prog.meta.get("Y_cliques")
    fh, close = None, False
    if trace is not None:
        if hasattr(trace, "write"):
            fh = trace
        else:
            fh, close = open(trace, "w"), True
    try:
        search = _Search(scenario, base, root_prog, k, limits, settings, cliques, fh)
        stats = search.run()
    finally:
        if close:
            fh.close()
    if search.incumbent is not None:
        res = search.incumbent.result
        res.status = "optimal"
    elif search.best_relax is not None:
        rep, prog = search.best_relax
        res = extract_state(rep, prog, scenario.meas, scenario.v_true)
        res.status = "bound-only"
    else:
        res = EstimationResult(status="bound-only")
    res.wall_time = stats.wall_time
    res.extra.update(
        strategy="s2",
        nodes=stats.nodes,
        gap=stats.gap,
        bound=stats.bound,
        search_status=stats.status,
        incumbent_node=stats.incumbent_node,
    )
    return res, stats
