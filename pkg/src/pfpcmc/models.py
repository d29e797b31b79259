"""Matrix-completion state estimators as conic programs.

Four builders share one variable layout.  ``X`` (n x 5) is the recovered
measurement matrix, so ``v = X[:,0] + j X[:,1]``, ``|v| = X[:,2]`` and
``s = X[:,3] + j X[:,4]``.

* :func:`build_model_mc` -- nuclear-norm completion with exact data equality.
* :func:`build_model_mcse` -- the same plus a noise ball and linear power flow.
* :func:`build_model_projection` -- projection-matrix relaxation of a rank-k
  ridge fit.
* :func:`build_model_pfpc` -- the projection model with linear power flow.

The sparse PSD strategy (S1) swaps the big ``[[Y, X], [X', Theta]]`` block for
small principal blocks chosen by :func:`select_submatrices`; see
:func:`apply_sparse_psd`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import conic
from .conic import Affine, ConicProgram, SolveReport, SolveSettings, bmat
from .measgen import M_COLS, MeasurementMatrix, Scenario
from .netmodel import LinearPowerFlowModel

__all__ = [
    "ModelError",
    "PowerFlowToleranceSet",
    "SlackData",
    "SubmatrixPlan",
    "EstimationResult",
    "build_model_mc",
    "build_model_mcse",
    "build_model_projection",
    "build_model_pfpc",
    "default_delta",
    "select_submatrices",
    "apply_sparse_psd",
    "reduce_rank_one",
    "split_w_rows",
    "chordal_cliques",
    "y_pattern",
    "extract_state",
    "mape",
]


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class PowerFlowToleranceSet:
    """Weights and loss for the linear power-flow tolerance variables.

    The tolerance variables themselves (``tau_re``, ``tau_im``, ``gamma``,
    ``alpha_re``, ``alpha_im``) are created inside each program.
    """

    # residuals are measured in noise units by default (see fit_weights), so
    # power-flow misfit needs a comparable price; 1.0 lets the ridge term win
    w_tau_re: float = 100.0
    w_tau_im: float = 100.0
    w_gamma: float = 100.0
    w_alpha_re: float = 100.0
    w_alpha_im: float = 100.0
    loss: str = "ell1"  # or "squared-ell2"

    def __post_init__(self):
        if self.loss not in ("ell1", "squared-ell2"):
            raise ModelError(f"unknown loss {self.loss!r}")
        if min(self.weights().values()) < 0:
            raise ModelError("tolerance weights must be nonnegative")

    def weights(self) -> dict:
        return {
            "tau_re": self.w_tau_re,
            "tau_im": self.w_tau_im,
            "gamma": self.w_gamma,
            "alpha_re": self.w_alpha_re,
            "alpha_im": self.w_alpha_im,
        }

    @classmethod
    def uniform(cls, weight: float, loss: str = "ell1") -> "PowerFlowToleranceSet":
        return cls(weight, weight, weight, weight, weight, loss)


@dataclass(frozen=True)
class SlackData:
    v0: complex
    s0: complex | None = None

    @classmethod
    def from_scenario(cls, scn: Scenario) -> "SlackData":
        return cls(scn.case.v0, scn.s0)


# ---------------------------------------------------------------------------
# shared pieces


def _observed(prog: ConicProgram, X: Affine, meas: MeasurementMatrix) -> Affine:
    if len(meas.psi) == 0:
        raise ModelError("no observed entries")
    if X.shape != (meas.n, M_COLS):
        raise ModelError(f"X shape {X.shape} does not match measurement matrix {meas.n}x5")
    return X[meas.psi[:, 0], meas.psi[:, 1]] - meas.values


def _power_flow_block(
    prog: ConicProgram,
    X: Affine,
    lpf: LinearPowerFlowModel,
    slack: SlackData | None,
    tol: PowerFlowToleranceSet,
) -> Affine:
    """Add the linear power-flow tolerance constraints; return their loss term."""
    n = lpf.n
    if X.shape[0] != n:
        raise ModelError(f"linear model has {n} buses, measurement matrix {X.shape[0]}")
    S = conic.hstack([X[:, 3], X[:, 4]])  # [Re s; Im s]
    # nonnegativity is implied by the two-sided bounds below; stating it again
    # makes every tight tolerance degenerate for interior-point backends
    tau_re = prog.variable("tau_re", n)
    tau_im = prog.variable("tau_im", n)
    gamma = prog.variable("gamma", n)
    r_re = X[:, 0] - lpf.w.real - lpf.A.real @ S
    r_im = X[:, 1] - lpf.w.imag - lpf.A.imag @ S
    r_mag = X[:, 2] - np.abs(lpf.w) - lpf.C @ S
    groups = {"tau_re": (tau_re, r_re), "tau_im": (tau_im, r_im), "gamma": (gamma, r_mag)}
    if slack is not None and slack.s0 is not None:
        a_re = prog.variable("alpha_re", ())
        a_im = prog.variable("alpha_im", ())
        g = lpf.Y0L
        # v0 * (conj(Y00 v0) + conj(Y0L v)), with v = X0 + j X1
        z_re = (g.real @ X[:, 0] - g.imag @ X[:, 1]) + np.real(np.conj(lpf.Y00 * slack.v0))
        z_im = (-g.real @ X[:, 1] - g.imag @ X[:, 0]) + np.imag(np.conj(lpf.Y00 * slack.v0))
        v0 = complex(slack.v0)
        t_re = z_re * v0.real - z_im * v0.imag
        t_im = z_im * v0.real + z_re * v0.imag
        groups["alpha_re"] = (a_re, -t_re + slack.s0.real)
        groups["alpha_im"] = (a_im, -t_im + slack.s0.imag)
    weights = tol.weights()
    loss = Affine.wrap(0.0)
    for name, (eps, resid) in groups.items():
        prog.add_le(resid, eps, name=f"pf:{name}:upper")
        prog.add_le(-eps, resid, name=f"pf:{name}:lower")
        if weights[name] == 0:
            continue
        if tol.loss == "ell1":
            loss = loss + weights[name] * eps.sum()
        else:
            r = prog.variable(f"sq_{name}", (), lb=0.0)
            # r >= ||eps||^2  <=>  ||(2 eps, r - 1)|| <= r + 1
            prog.add_soc(r + 1.0, conic.hstack([2.0 * eps.ravel(), (r - 1.0).reshape(1)]))
            loss = loss + weights[name] * r
    prog.meta["tolerance_groups"] = sorted(groups)
    return loss


def _projection_block(prog: ConicProgram, X: Affine, n: int, k: int) -> tuple:
    if not (isinstance(k, (int, np.integer)) and 1 <= k <= M_COLS):
        raise ModelError(f"k must be an integer in 1..{M_COLS}, got {k}")
    Y = prog.variable("Y", (n, n), symmetric=True)
    U = prog.variable("U", (n, k))
    Theta = prog.variable("Theta", (M_COLS, M_COLS), symmetric=True)
    prog.meta["W"] = prog.add_psd_block(bmat([[Y, X], [X.T, Theta]]), name="W")
    prog.meta["W_top"] = "Y"
    # [[Y, U], [U', I]] >= 0 already forces Y >= U U' >= 0
    prog.meta["YU"] = prog.add_psd_block(bmat([[Y, U], [U.T, np.eye(k)]]), name="YU")
    prog.meta["I-Y"] = prog.add_psd_block(np.eye(n) - Y, name="I-Y")
    prog.add_le(Y.trace(), float(k), name="trY<=k")
    prog.meta["k"] = int(k)
    return Y, U, Theta


# relative accuracy assumed for readings generated without noise
NOISE_FLOOR = 1e-4


def fit_weights(meas: MeasurementMatrix, scaling: str | float | None) -> np.ndarray | float:
    """Residual weights for the data-fit norm.

    ``"noise"`` divides each residual by the RMS nominal noise std of its
    column, so the fit is measured in noise units.  Columns without noise
    borrow the smallest nonzero column std; with no noise at all every
    reading is taken as accurate to ``NOISE_FLOOR`` (relative).  ``None`` or
    ``"none"`` gives the plain Frobenius norm and a number gives a uniform
    weight.
    """
    if scaling is None or (isinstance(scaling, str) and scaling == "none"):
        return 1.0
    if isinstance(scaling, str):
        if scaling not in ("noise", "noise-rms"):
            raise ModelError(f"unknown fit scaling {scaling!r}")
        std = meas.noise_std()
        if not np.any(std > 0):
            std = NOISE_FLOOR * np.abs(meas.values)
        if scaling == "noise-rms":
            rms = float(np.sqrt(np.mean(std**2))) if std.size else 0.0
            return 1.0 / rms if rms > 0 else 1.0
        cols = meas.psi[:, 1]
        col_std = {int(j): float(np.sqrt(np.mean(std[cols == j] ** 2))) for j in np.unique(cols)}
        positive = [v for v in col_std.values() if v > 0]
        if not positive:
            return 1.0
        floor = min(positive)
        return np.array([1.0 / max(col_std[int(j)], floor) for j in cols])
    scaling = float(scaling)
    if not scaling > 0:
        raise ModelError("fit weight must be positive")
    return scaling


def _fit_term(prog: ConicProgram, X: Affine, meas: MeasurementMatrix, scaling=None) -> Affine:
    f = prog.variable("fit", ())
    wts = fit_weights(meas, scaling)
    prog.add_soc(f, _observed(prog, X, meas) * wts, name="fit")
    prog.meta["fit_scaling"] = scaling if isinstance(scaling, (str, type(None))) else float(scaling)
    return f


# ---------------------------------------------------------------------------
# builders


def build_model_mc(meas: MeasurementMatrix) -> ConicProgram:
    """Minimum-trace completion with ``X = M`` on the observed entries."""
    n = meas.n
    prog = ConicProgram("mc")
    X = prog.variable("X", (n, M_COLS))
    D1 = prog.variable("D1", (n, n), symmetric=True)
    D2 = prog.variable("D2", (M_COLS, M_COLS), symmetric=True)
    prog.add_zero(_observed(prog, X, meas), name="data")
    prog.meta["W"] = prog.add_psd_block(bmat([[D1, X], [X.T, D2]]), name="W")
    prog.meta["W_top"] = "D1"
    prog.minimize(D1.trace() + D2.trace())
    prog.meta["model"] = "mc"
    return prog


def default_delta(meas: MeasurementMatrix) -> float:
    """Noise-ball radius: RMS noise std over observed entries times sqrt(|psi|)."""
    std = meas.noise_std()
    if std.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(std**2)) * np.sqrt(std.size))


def build_model_mcse(
    meas: MeasurementMatrix,
    lpf: LinearPowerFlowModel,
    slack: SlackData | None = None,
    tol: PowerFlowToleranceSet | None = None,
    delta: float | None = None,
) -> ConicProgram:
    """Trace completion inside a noise ball, with linear power-flow tolerances.

    ``delta=None`` uses :func:`default_delta`; ``delta=0`` pins the observed
    entries exactly.
    """
    tol = tol or PowerFlowToleranceSet()
    if delta is None:
        delta = default_delta(meas)
    if delta < 0:
        raise ModelError("delta must be nonnegative")
    n = meas.n
    prog = ConicProgram("mcse")
    X = prog.variable("X", (n, M_COLS))
    D1 = prog.variable("D1", (n, n), symmetric=True)
    D2 = prog.variable("D2", (M_COLS, M_COLS), symmetric=True)
    resid = _observed(prog, X, meas)
    if delta == 0:
        prog.add_zero(resid, name="data")
    else:
        prog.add_soc(delta, resid, name="data")
    prog.meta["W"] = prog.add_psd_block(bmat([[D1, X], [X.T, D2]]), name="W")
    prog.meta["W_top"] = "D1"
    loss = _power_flow_block(prog, X, lpf, slack, tol)
    prog.minimize(D1.trace() + D2.trace() + loss)
    prog.meta.update(model="mcse", delta=float(delta))
    return prog


def build_model_projection(
    meas: MeasurementMatrix, k: int = 1, lam: float = 10.0, fit_scaling="noise"
) -> ConicProgram:
    """``min ||X_psi - M_psi||_F + lam tr(Theta)`` over the relaxed projection set.

    See :func:`fit_weights` for ``fit_scaling``.
    """
    if not lam > 0:
        raise ModelError("lambda must be positive")
    n = meas.n
    prog = ConicProgram("projection")
    X = prog.variable("X", (n, M_COLS))
    _, _, Theta = _projection_block(prog, X, n, k)
    fit = _fit_term(prog, X, meas, fit_scaling)
    prog.minimize(fit + lam * Theta.trace())
    prog.meta.update(model="projection", lam=float(lam))
    return prog


def build_model_pfpc(
    meas: MeasurementMatrix,
    lpf: LinearPowerFlowModel,
    slack: SlackData | None = None,
    k: int = 1,
    lam: float = 10.0,
    tol: PowerFlowToleranceSet | None = None,
    fit_scaling="noise",
) -> ConicProgram:
    """Projection model plus weighted linear power-flow tolerances."""
    if not lam > 0:
        raise ModelError("lambda must be positive")
    tol = tol or PowerFlowToleranceSet()
    n = meas.n
    prog = ConicProgram("pfpc")
    X = prog.variable("X", (n, M_COLS))
    _, _, Theta = _projection_block(prog, X, n, k)
    fit = _fit_term(prog, X, meas, fit_scaling)
    loss = _power_flow_block(prog, X, lpf, slack, tol)
    prog.minimize(fit + lam * Theta.trace() + loss)
    prog.meta.update(model="pfpc", lam=float(lam))
    return prog


# ---------------------------------------------------------------------------
# sparse PSD approximation


@dataclass
class SubmatrixPlan:
    """Index sets of principal submatrices of ``W = [[Y, X], [X', Theta]]``.

    Indices ``0..n-1`` address the ``Y`` block and ``n..n+4`` the ``Theta``
    block.  ``uncovered`` lists X entries ``(i, j)`` that no set reaches.
    """

    n: int
    d: int
    sets: list  # sorted tuples
    seed: int = 0
    uncovered: list = field(default_factory=list)

    @property
    def n_d(self) -> int:
        return len(self.sets)

    @property
    def complete(self) -> bool:
        return not self.uncovered

    def coverage(self) -> np.ndarray:
        """Number of sets covering each entry of X (n x 5)."""
        return _coverage(self.sets, self.n)


def _coverage(sets, n: int) -> np.ndarray:
    cov = np.zeros((n, M_COLS), dtype=int)
    for s in sets:
        s = np.asarray(s)
        rows = s[s < n]
        cols = s[s >= n] - n
        if rows.size and cols.size:
            cov[np.ix_(rows, cols)] += 1
    return cov


def _set_entries(s, n):
    s = np.asarray(s)
    rows, cols = s[s < n], s[s >= n] - n
    return [(int(i), int(j)) for i in rows for j in cols]


def select_submatrices(
    n: int,
    adjacency: sp.spmatrix | None,
    d: int,
    n_d_cap: int | None = None,
    seed: int = 0,
) -> SubmatrixPlan:
    """One ``d x d`` index set per X entry, anchored on the entry.

    The set for entry ``(i, j)`` is ``{i, n+j}`` plus ``d-2`` further indices:
    buses electrically adjacent to ``i`` first (nearest hops of the feeder
    graph), then seeded random buses, then other Theta indices if the Y block
    runs out.  Duplicates are dropped.  With ``n_d_cap`` below the count, sets
    whose entries are all covered elsewhere are dropped first (seeded order);
    further drops are recorded in ``uncovered``.  With ``n_d_cap`` above the
    count, extra seeded sets are added until the cap is met: a random anchor
    with its neighbours shuffled within each hop ring, then, if those run
    out, random buses within ``d`` hops.
    """
    size = n + M_COLS
    if d < 2:
        raise ModelError("submatrix size d must be at least 2")
    if d > size:
        raise ModelError(f"submatrix size d={d} exceeds W dimension {size}")
    if n_d_cap is not None and n_d_cap < 1:
        raise ModelError("n_d cap must be positive")
    rng = np.random.default_rng(seed)
    if adjacency is None:
        adjacency = sp.csr_matrix((n, n))
    adjacency = sp.csr_matrix(adjacency)
    hops = _hop_lists(adjacency, max_hops=max(2, d))

    def make(i: int, j: int, mode: str) -> tuple:
        chosen = [i, n + j]
        if mode == "ordered":
            near = [b for ring in hops[i] for b in ring]
        elif mode == "ring":
            near = [b for ring in hops[i] for b in rng.permutation(ring)]
        else:
            # any bus within the hop horizon: small d runs out of nearest sets
            near = rng.permutation([b for ring in hops[i] for b in ring])
        for b in near:
            if len(chosen) == d:
                break
            chosen.append(int(b))
        if len(chosen) < d:
            others = np.setdiff1d(np.arange(n), chosen)
            take = min(d - len(chosen), others.size)
            chosen += rng.choice(others, size=take, replace=False).tolist()
        if len(chosen) < d:
            extra = np.setdiff1d(np.arange(n, size), chosen)
            chosen += rng.choice(extra, size=d - len(chosen), replace=False).tolist()
        return tuple(sorted(int(c) for c in chosen))

    sets, seen = [], set()
    for i in range(n):
        for j in range(M_COLS):
            s = make(i, j, "ordered")
            if s not in seen:
                seen.add(s)
                sets.append(s)

    uncovered: list = []
    if n_d_cap is not None and len(sets) > n_d_cap:
        sets, uncovered = _truncate(sets, n, n_d_cap, rng)
    elif n_d_cap is not None and len(sets) < n_d_cap:
        # nearest-first padding keeps the chordal fill of Y small; wider sets
        # only once those run out
        for mode in ("ring", "wide"):
            attempts = 0
            while len(sets) < n_d_cap and attempts < 25 * n_d_cap:
                attempts += 1
                s = make(int(rng.integers(n)), int(rng.integers(M_COLS)), mode)
                if s not in seen:
                    seen.add(s)
                    sets.append(s)
    return SubmatrixPlan(n=n, d=d, sets=sets, seed=seed, uncovered=uncovered)


def _hop_lists(adjacency: sp.csr_matrix, max_hops: int) -> list:
    """For each bus, its neighbours grouped by hop distance (1..max_hops)."""
    n = adjacency.shape[0]
    out = []
    for i in range(n):
        rings, seen, frontier = [], {i}, [i]
        for _ in range(max_hops):
            nxt = []
            for b in frontier:
                for c in adjacency.indices[adjacency.indptr[b]:adjacency.indptr[b + 1]]:
                    if c not in seen:
                        seen.add(c)
                        nxt.append(int(c))
            if not nxt:
                break
            rings.append(sorted(nxt))
            frontier = nxt
        out.append(rings)
    return out


def _truncate(sets, n, cap, rng):
    cov = _coverage(sets, n)
    keep = np.ones(len(sets), dtype=bool)
    order = rng.permutation(len(sets))
    for idx in order:
        if keep.sum() <= cap:
            break
        ent = _set_entries(sets[idx], n)
        if all(cov[e] > 1 for e in ent):
            keep[idx] = False
            for e in ent:
                cov[e] -= 1
    if keep.sum() > cap:
        kept = np.flatnonzero(keep)
        drop = rng.choice(kept, size=kept.size - cap, replace=False)
        keep[drop] = False
    sets = [s for s, k in zip(sets, keep) if k]
    cov = _coverage(sets, n)
    uncovered = [(int(i), int(j)) for i, j in zip(*np.nonzero(cov == 0))]
    return sets, uncovered


def apply_sparse_psd(prog: ConicProgram, plan: SubmatrixPlan, handle: int | None = None) -> ConicProgram:
    """Copy of ``prog`` with the big W block replaced by the plan's principal blocks."""
    if handle is None:
        handle = prog.meta.get("W")
    if handle is None or handle not in prog.constraints:
        raise ModelError("program has no registered W block to rewrite")
    W = prog.constraint(handle).expr
    if W.shape[0] != plan.n + M_COLS:
        raise ModelError(f"plan is for n={plan.n}, W has dimension {W.shape[0]}")
    out = prog.copy()
    out.remove(handle)
    # one row-selection per block, without re-validating symmetry each time
    flat = np.arange(W.size).reshape(W.shape)
    handles = []
    for k, s in enumerate(plan.sets):
        idx = flat[np.ix_(s, s)]
        block = Affine(W.coef[idx.ravel()], W.const[idx.ravel()], idx.shape)
        handles.append(out._register(conic.Constraint(conic.PSD, block, f"W{k}")))
    out.meta["W"] = None
    out.meta["W_blocks"] = handles
    out.meta["W_sets"] = [list(t) for t in plan.sets]
    out.meta["strategy"] = "s1"
    out.meta["d"], out.meta["n_d"] = plan.d, plan.n_d
    out.name = prog.name + "+s1"
    return out


def chordal_cliques(n: int, edges) -> list:
    """Maximal cliques of a chordal extension (greedy minimum-degree elimination)."""
    nbrs = [set() for _ in range(n)]
    for i, j in edges:
        if i != j:
            nbrs[i].add(j)
            nbrs[j].add(i)
    alive = set(range(n))
    cliques: list = []
    while alive:
        v = min(alive, key=lambda u: (len(nbrs[u]), u))
        c = nbrs[v] | {v}
        if not any(c <= old for old in cliques):
            cliques.append(c)
        for a in nbrs[v]:
            nbrs[a] |= nbrs[v] - {a}
            nbrs[a].discard(v)
        alive.discard(v)
        nbrs[v] = set()
    # an earlier, smaller clique can be contained in a later one
    cliques.sort(key=len, reverse=True)
    out: list = []
    for c in cliques:
        if not any(c <= o for o in out):
            out.append(c)
    return [sorted(c) for c in out]


def _touches(expr: Affine, cols: np.ndarray) -> bool:
    cols = cols[cols < expr.width]
    return bool(cols.size) and expr.coef.tocsc()[:, cols].nnz > 0


def y_pattern(n: int, sets) -> np.ndarray:
    """Entries of ``Y`` (n x n, boolean) that some principal block touches, plus the diagonal."""
    pattern = np.zeros((n, n), dtype=bool)
    for s in sets:
        r = np.asarray([i for i in s if i < n], dtype=int)
        pattern[np.ix_(r, r)] = True
    np.fill_diagonal(pattern, True)
    return pattern


def _y_touched(prog: ConicProgram, Y: Affine, skip: set) -> np.ndarray:
    """Entries of the square variable ``Y`` used by constraints outside ``skip`` or the objective."""
    n = Y.shape[0]
    yflat = Y.index.ravel()
    touched = np.zeros(n * n, dtype=bool)
    exprs = [c.expr for h, c in prog.constraints.items() if h not in skip]
    if prog.objective is not None:
        exprs.append(prog.objective)
    for e in exprs:
        if e.width > yflat.min():
            touched |= np.isin(yflat, np.unique(e.coef.indices))
    return touched.reshape(n, n)


def split_w_rows(prog: ConicProgram) -> ConicProgram:
    """Equivalent program with the full ``W`` block split into ``n`` blocks of size 6.

    Write ``W = [[T, X], [X', S]]`` with ``T`` n x n (``D1`` or ``Y``) and
    ``S`` 5 x 5.  When no constraint or cost other than ``W`` involves an
    off-diagonal entry of ``T``, then ``W >= 0`` for some choice of those
    entries iff every ``[[T_ii, x_i'], [x_i, S]]`` is PSD: given these,
    ``T = X S^+ X' + diag(T_ii - x_i' S^+ x_i)`` completes ``W`` with the same
    diagonal.  The off-diagonal entries are pinned to zero in the result.
    Programs that do not qualify are returned unchanged.
    """
    h = prog.meta.get("W")
    name = prog.meta.get("W_top")
    if h is None or h not in prog.constraints or name not in prog.variables:
        return prog
    T = prog[name]
    n = T.shape[0]
    if np.triu(_y_touched(prog, T, {h}), 1).any():
        return prog
    out = prog.copy()
    W = out.constraint(h).expr
    out.remove(h)
    flat = np.arange(W.size).reshape(W.shape)
    tail = list(range(n, W.shape[0]))
    handles = []
    for i in range(n):
        idx = flat[np.ix_([i] + tail, [i] + tail)].ravel()
        blk = Affine(W.coef[idx], W.const[idx], (len(tail) + 1, len(tail) + 1))
        handles.append(out._register(conic.Constraint(conic.PSD, blk, f"Wrow{i}")))
    iu, ju = np.triu_indices(n, 1)
    if iu.size:
        out.add_zero(T[iu, ju], name=f"{name}:unused")
    out.meta["W"] = None
    out.meta["W_rows"] = handles
    out.meta["split"] = "rows"
    out.name = prog.name + "+rows"
    return out


def reduce_rank_one(prog: ConicProgram, keep_u: bool = False) -> ConicProgram:
    """Equivalent, smaller program for projection models with ``k = 1``.

    With ``k = 1``, ``Y >= 0`` and ``tr Y <= 1`` already give ``Y <= I``, so
    the ``I - Y`` block is dropped.  After the sparse PSD rewrite only the
    entries of ``Y`` inside some block matter (plus any entries touched by
    other constraints), and a partial matrix on a chordal pattern has a PSD
    completion iff every clique block is PSD.  So
    ``[[Y, U], [U', 1]] >= 0``, i.e. ``Y - U U' >= 0``, becomes one small block
    ``[[Y_C, U_C], [U_C', 1]]`` per clique ``C`` of a chordal extension of that
    pattern, and entries of ``Y`` outside the cliques are pinned to zero.

    With ``keep_u=False`` and ``U`` used nowhere else, ``U`` is pinned to
    zero too and the clique blocks shrink to ``Y_C >= 0``.  With the full
    ``W`` block present, ``Y >= 0`` is already implied, and ``W`` itself is
    split into ``n`` blocks of size 6 (see :func:`split_w_rows`).
    Programs that do not qualify are returned unchanged.
    """
    if prog.meta.get("k") != 1 or "Y" not in prog.variables:
        return prog
    out = prog.copy()
    if prog.meta.get("I-Y") in out.constraints:
        out.remove(prog.meta["I-Y"])
        out.meta["I-Y"] = None
    h_yu = prog.meta.get("YU")
    if h_yu not in out.constraints:
        out.meta["reduced"] = "I-Y"
        return out
    Y, U = prog["Y"], prog["U"]
    n = Y.shape[0]
    sparse = out.meta.get("W_sets") is not None
    others = [c for h, c in out.constraints.items() if h != h_yu]
    u_used = keep_u or any(_touches(c.expr, np.unique(U.index)) for c in others)
    if not sparse and u_used:
        out.meta["reduced"] = "I-Y"
        return out
    out.remove(h_yu)
    out.meta["YU"] = None
    if not sparse:
        out.add_zero(U, name="U=0")
        out.meta["reduced"] = "rank-one"
        out.name = prog.name + "+r1"
        return split_w_rows(out)
    # entries of Y reached by anything other than the W blocks
    pattern = y_pattern(n, out.meta["W_sets"]) | _y_touched(out, Y, set(out.meta["W_blocks"]))
    iu, ju = np.nonzero(np.triu(pattern, 1))
    cliques = chordal_cliques(n, zip(iu.tolist(), ju.tolist()))
    covered = np.zeros((n, n), dtype=bool)
    handles = []
    for c in cliques:
        covered[np.ix_(c, c)] = True
        if u_used:
            blk = bmat([[Y[np.ix_(c, c)], U[c, :]], [U[c, :].T, np.eye(1)]])
        else:
            blk = Y[np.ix_(c, c)]
        handles.append(out._register(conic.Constraint(conic.PSD, blk, f"YU:{len(c)}")))
    if not u_used:
        out.add_zero(U, name="U=0")
    free = np.triu(~covered, 1)
    if free.any():
        out.add_zero(Y[np.nonzero(free)], name="Y:unused")
    out.meta["Y_cliques"] = cliques
    out.meta["YU_blocks"] = handles
    out.meta["reduced"] = "rank-one"
    out.name = prog.name + "+r1"
    return out


# ---------------------------------------------------------------------------
# results


def mape(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Mean absolute percentage error, in percent."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ValueError("estimate and truth shapes differ")
    if np.any(truth == 0):
        raise ValueError("MAPE undefined for zero true values")
    return float(100.0 * np.mean(np.abs(estimate - truth) / np.abs(truth)))


@dataclass
class EstimationResult:
    status: str
    X: np.ndarray | None = None
    v: np.ndarray | None = None
    vmag: np.ndarray | None = None
    mape_vmag: float = float("nan")
    mape_angle: float = float("nan")
    objective: float = float("nan")
    terms: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    solve_time: float = float("nan")
    wall_time: float = float("nan")
    iterations: int = 0
    backend: str = ""
    max_residual: float = float("nan")
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _angle_mape(v_est: np.ndarray, v_true: np.ndarray) -> float:
    """MAPE of bus voltage angle over buses with a measurable angle."""
    th, th_hat = np.angle(v_true), np.angle(v_est)
    keep = np.abs(th) > 1e-6
    if not keep.any():
        return float("nan")
    return mape(th_hat[keep], th[keep])


def extract_state(
    report: SolveReport,
    prog: ConicProgram,
    meas: MeasurementMatrix,
    v_true: np.ndarray | None = None,
) -> EstimationResult:
    """Voltage estimates, accuracy and objective decomposition from a solve."""
    res = EstimationResult(
        status=report.status,
        objective=report.objective,
        solve_time=report.solve_time,
        iterations=report.iterations,
        backend=report.backend,
        max_residual=report.max_residual,
    )
    if not report.ok:
        return res
    x = report.x
    X = prog["X"].value(x)
    res.X = X
    res.v = X[:, 0] + 1j * X[:, 1]
    res.vmag = X[:, 2].copy()
    truth = meas.ground_truth[:, 2]
    if np.all(np.isfinite(truth)) and np.all(truth != 0):
        res.mape_vmag = mape(res.vmag, truth)
    if v_true is None and np.all(np.isfinite(meas.ground_truth[:, :2])):
        v_true = meas.ground_truth[:, 0] + 1j * meas.ground_truth[:, 1]
    if v_true is not None:
        res.mape_angle = _angle_mape(res.v, v_true)
    terms = {}
    if "fit" in prog.variables:
        terms["fit"] = float(prog["fit"].value(x))
    if "Theta" in prog.variables:
        terms["trace"] = float(prog.meta.get("lam", 1.0) * prog["Theta"].value(x).trace())
    if "D1" in prog.variables:
        terms["trace"] = float(prog["D1"].value(x).trace() + prog["D2"].value(x).trace())
    for name in prog.meta.get("tolerance_groups", []):
        val = np.atleast_1d(prog[name].value(x))
        res.tolerances[name] = val
    if res.tolerances:
        terms["tolerance"] = float(report.objective - sum(terms.values()))
    res.terms = terms
    return res
