"""Feeder cases, bus admittance partition, and the fixed-point linear power flow.

Internal indexing puts the slack bus at position 0 and the ``n`` non-slack
buses at positions ``1..n``; every non-slack vector returned by this module is
indexed ``0..n-1`` in that order.

Per-unit conventions: injections are generation minus load, divided by the
case's MVA base, so a load bus has a negative real injection.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

__all__ = [
    "CaseParseError",
    "CaseValidationError",
    "DegenerateFeederError",
    "PowerFlowDivergence",
    "NetworkCase",
    "AdmittancePartition",
    "LinearPowerFlowModel",
    "ACSolution",
    "parse_case",
    "load_case",
    "format_case",
    "build_admittance",
    "build_full_admittance",
    "build_linear_model",
    "solve_ac_power_flow",
    "power_mismatch",
    "synthetic_feeder",
    "DATA_DIR",
]

DATA_DIR = Path(__file__).resolve().parent / "data"

# MATPOWER column positions (0-based) for the fields this module reads.
BUS_I, BUS_TYPE, PD, QD, GS, BS = 0, 1, 2, 3, 4, 5
VM, VA = 7, 8
F_BUS, T_BUS, BR_R, BR_X, BR_B = 0, 1, 2, 3, 4
TAP, SHIFT, BR_STATUS = 8, 9, 10

PQ, PV, REF, ISOLATED = 1, 2, 3, 4


class CaseParseError(ValueError):
    """Malformed case text; ``lineno`` is 1-based when known."""

    def __init__(self, msg, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            msg = f"line {lineno}: {msg}"
        super().__init__(msg)


class CaseValidationError(ValueError):
    pass


class DegenerateFeederError(ArithmeticError):
    pass


class PowerFlowDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class NetworkCase:
    """A validated single-phase feeder.

    Bus arrays have length ``n + 1`` with the slack bus first.  Branch arrays
    hold in-service branches only, with endpoints given as internal indices.
    """

    name: str
    base_mva: float
    bus_ids: np.ndarray  # external ids, slack first
    load: np.ndarray  # complex load in p.u. (Pd + jQd) / base
    shunt: np.ndarray  # complex shunt admittance in p.u. (Gs + jBs) / base
    from_bus: np.ndarray
    to_bus: np.ndarray
    impedance: np.ndarray  # complex series r + jx, p.u.
    charging: np.ndarray  # total line charging susceptance, p.u.
    tap: np.ndarray  # off-nominal ratio, 1.0 when absent
    v0: complex = 1.0 + 0.0j

    @property
    def n(self) -> int:
        """Number of non-slack buses."""
        return len(self.bus_ids) - 1

    @property
    def injection(self) -> np.ndarray:
        """Complex power injection at the non-slack buses (p.u.)."""
        return -self.load[1:]

    def scaled(self, factor: float) -> "NetworkCase":
        """Copy with every load multiplied by ``factor``."""
        return replace(self, load=self.load * factor)

    def with_injection(self, s: np.ndarray) -> "NetworkCase":
        s = np.asarray(s, dtype=complex)
        if s.shape != (self.n,):
            raise ValueError(f"expected {self.n} injections, got {s.shape}")
        load = self.load.copy()
        load[1:] = -s
        return replace(self, load=load)

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency among the non-slack buses (0..n-1)."""
        mask = (self.from_bus > 0) & (self.to_bus > 0)
        i = self.from_bus[mask] - 1
        j = self.to_bus[mask] - 1
        data = np.ones(2 * len(i))
        a = sp.coo_matrix((data, (np.r_[i, j], np.r_[j, i])), shape=(self.n, self.n))
        a = a.tocsr()
        a.data[:] = 1.0
        return a


# ---------------------------------------------------------------------------
# parsing


_MPC_ASSIGN = re.compile(r"mpc\.(\w+)\s*=\s*(.*)")
_BARE_SECTION = re.compile(r"^(bus|branch|baseMVA|gen)\b\s*[:=]?\s*(.*)$", re.IGNORECASE)


def _strip_comment(line: str) -> str:
    for mark in ("%", "#"):
        pos = line.find(mark)
        if pos >= 0:
            line = line[:pos]
    return line.strip()


def _parse_row(text: str, lineno: int) -> list[float]:
    tokens = [t for t in re.split(r"[\s,]+", text.strip().rstrip(";").strip()) if t]
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise CaseParseError(f"non-numeric entry in row {text!r}", lineno) from exc


def _read_sections(text: str) -> tuple[dict[str, list[tuple[int, list[float]]]], float | None]:
    """Collect numeric rows per section, accepting two layouts.

    MATPOWER ``mpc.bus = [ ... ];`` blocks, or bare ``bus`` / ``branch``
    headers followed by rows, ended by a blank line, ``end`` or the next
    header.  ``baseMVA`` is either ``mpc.baseMVA = 10;`` or ``baseMVA 10``.
    """
    sections: dict[str, list[tuple[int, list[float]]]] = {}
    base_mva = None
    current = None
    bracketed = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            if current is not None and not bracketed:
                current = None
            continue
        if line.startswith("function"):
            continue
        m = _MPC_ASSIGN.match(line)
        if m is None and not bracketed:
            m = _BARE_SECTION.match(line)
        if m is not None:
            key, rest = m.group(1), m.group(2).strip()
            if key.lower() == "basemva":
                vals = _parse_row(rest.strip("=[]; "), lineno)
                if len(vals) != 1:
                    raise CaseParseError("baseMVA expects one number", lineno)
                base_mva = vals[0]
                current = None
                continue
            if key in ("version",):
                continue
            current = key.lower()
            sections.setdefault(current, [])
            bracketed = rest.startswith("[")
            rest = rest.lstrip("[").strip()
            closing = rest.endswith("];") or rest.endswith("]")
            rest = rest.rstrip(";").rstrip("]").strip()
            if rest:
                for chunk in rest.split(";"):
                    if chunk.strip():
                        sections[current].append((lineno, _parse_row(chunk, lineno)))
            if closing:
                current, bracketed = None, False
            continue
        if current is None:
            if line.lower() == "end" or line.startswith("mpc."):
                continue
            raise CaseParseError(f"data outside any section: {line!r}", lineno)
        if line.lower() == "end":
            current, bracketed = None, False
            continue
        closing = line.startswith("]")
        body = line.lstrip("]").rstrip(";")
        if body.endswith("]"):
            closing = True
            body = body.rstrip("]")
        for chunk in body.split(";"):
            if chunk.strip():
                sections[current].append((lineno, _parse_row(chunk, lineno)))
        if closing:
            current, bracketed = None, False
    if bracketed:
        raise CaseParseError(f"unterminated section {current!r}")
    return sections, base_mva


def _table(rows: list[tuple[int, list[float]]], ncols: int, name: str) -> np.ndarray:
    if not rows:
        raise CaseParseError(f"section {name!r} is empty")
    width = max(len(r) for _, r in rows)
    out = np.zeros((len(rows), max(width, ncols)))
    for k, (lineno, row) in enumerate(rows):
        if len(row) < ncols:
            raise CaseParseError(
                f"{name} row has {len(row)} columns, need at least {ncols}", lineno
            )
        out[k, : len(row)] = row
    return out


def parse_case(text: str, name: str = "case") -> NetworkCase:
    """Parse MATPOWER-style tabular case text into a validated NetworkCase.

    Only the bus columns ``bus_i type Pd Qd Gs Bs area Vm Va`` and the branch
    columns ``fbus tbus r x b rateA rateB rateC ratio angle status`` are read;
    anything after them is ignored.  Branch ``status`` defaults to in-service
    when the column is absent.
    """
    sections, base_mva = _read_sections(text)
    if base_mva is None:
        raise CaseParseError("missing baseMVA")
    if base_mva <= 0:
        raise CaseValidationError("baseMVA must be positive")
    if "bus" not in sections:
        raise CaseParseError("missing bus section")
    if "branch" not in sections:
        raise CaseParseError("missing branch section")
    bus = _table(sections["bus"], 4, "bus")
    branch = _table(sections["branch"], 4, "branch")
    if bus.shape[1] < 9:
        bus = np.hstack([bus, np.zeros((bus.shape[0], 9 - bus.shape[1]))])
        bus[:, VM] = np.where(bus[:, VM] == 0, 1.0, bus[:, VM])
    if branch.shape[1] < 11:
        pad = np.zeros((branch.shape[0], 11 - branch.shape[1]))
        pad[:, -1] = 1.0  # status column
        branch = np.hstack([branch, pad])
    return _build_case(bus, branch, base_mva, name)


def _build_case(bus: np.ndarray, branch: np.ndarray, base_mva: float, name: str) -> NetworkCase:
    types = bus[:, BUS_TYPE].astype(int)
    ids = bus[:, BUS_I].astype(int)
    if len(np.unique(ids)) != len(ids):
        raise CaseValidationError("duplicate bus ids")
    keep = types != ISOLATED
    bus, types, ids = bus[keep], types[keep], ids[keep]
    slack = np.flatnonzero(types == REF)
    if len(slack) != 1:
        raise CaseValidationError(f"need exactly one slack bus, found {len(slack)}")
    if np.any(types == PV):
        raise CaseValidationError("PV buses are not supported; only slack and PQ")
    bad = ~np.isin(types, (PQ, REF))
    if bad.any():
        raise CaseValidationError(f"unknown bus type {types[bad][0]}")
    order = np.r_[slack, np.flatnonzero(types != REF)]
    bus, ids = bus[order], ids[order]
    index = {int(b): k for k, b in enumerate(ids)}

    branch = branch[branch[:, BR_STATUS] != 0]
    if np.any(branch[:, SHIFT] != 0):
        raise CaseValidationError("phase-shifting transformers are not supported")
    try:
        f = np.array([index[int(b)] for b in branch[:, F_BUS]], dtype=int)
        t = np.array([index[int(b)] for b in branch[:, T_BUS]], dtype=int)
    except KeyError as exc:
        raise CaseValidationError(f"branch refers to unknown bus {exc.args[0]}") from None
    z = branch[:, BR_R] + 1j * branch[:, BR_X]
    if np.any(np.abs(z) == 0):
        raise CaseValidationError("branch with zero impedance")
    tap = np.where(branch[:, TAP] == 0, 1.0, branch[:, TAP])

    nb = len(ids)
    g = sp.coo_matrix((np.ones(len(f)), (f, t)), shape=(nb, nb))
    ncomp, _ = csgraph.connected_components(g, directed=False)
    if ncomp != 1:
        raise CaseValidationError(f"network is not connected ({ncomp} components)")

    v0 = bus[0, VM] * np.exp(1j * np.deg2rad(bus[0, VA]))
    if v0 == 0:
        v0 = 1.0 + 0.0j
    return NetworkCase(
        name=name,
        base_mva=float(base_mva),
        bus_ids=ids,
        load=(bus[:, PD] + 1j * bus[:, QD]) / base_mva,
        shunt=(bus[:, GS] + 1j * bus[:, BS]) / base_mva,
        from_bus=f,
        to_bus=t,
        impedance=z,
        charging=branch[:, BR_B].astype(float),
        tap=tap.astype(float),
        v0=complex(v0),
    )


def load_case(path_or_name: str | Path) -> NetworkCase:
    """Load a case file, or a bundled case by name (``"case4"``, ``"case141"``).

    ``"synthetic533"`` builds the seeded 533-bus generator feeder.
    """
    p = Path(path_or_name)
    if not p.exists():
        key = str(path_or_name)
        if key.startswith("synthetic"):
            nbus = int(key[len("synthetic"):] or 533)
            return synthetic_feeder(nbus)
        p = DATA_DIR / (key if key.endswith(".m") else key + ".m")
        if not p.exists():
            raise FileNotFoundError(path_or_name)
    return parse_case(p.read_text(), name=p.stem)


def format_case(case: NetworkCase) -> str:
    """Write a case back out as MATPOWER-style text (round-trips via parse_case)."""
    base = case.base_mva
    lines = [f"mpc.baseMVA = {base:.17g};", "", "mpc.bus = ["]
    vm, va = abs(case.v0), np.rad2deg(np.angle(case.v0))
    for k, bid in enumerate(case.bus_ids):
        typ = REF if k == 0 else PQ
        pd, qd = case.load[k].real * base, case.load[k].imag * base
        gs, bs = case.shunt[k].real * base, case.shunt[k].imag * base
        v = (vm, va) if k == 0 else (1.0, 0.0)
        lines.append(
            f"\t{bid}\t{typ}\t{pd:.17g}\t{qd:.17g}\t{gs:.17g}\t{bs:.17g}\t1\t{v[0]:.17g}\t{v[1]:.17g};"
        )
    lines += ["];", "", "mpc.branch = ["]
    for f, t, z, b, tap in zip(case.from_bus, case.to_bus, case.impedance, case.charging, case.tap):
        tap_out = 0.0 if tap == 1.0 else tap
        lines.append(
            f"\t{case.bus_ids[f]}\t{case.bus_ids[t]}\t{z.real:.17g}\t{z.imag:.17g}\t{b:.17g}"
            f"\t0\t0\t0\t{tap_out:.17g}\t0\t1;"
        )
    lines.append("];")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# admittance and linearization


@dataclass(frozen=True)
class AdmittancePartition:
    Y00: complex
    Y0L: np.ndarray  # (n,)
    YL0: np.ndarray  # (n,)
    YLL: sp.csc_matrix  # (n, n)
    _lu: object = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.YLL.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Apply YLL^{-1} to a vector or matrix."""
        return self._lu.solve(np.asarray(rhs, dtype=complex))

    def full(self) -> np.ndarray:
        """Dense (n+1)x(n+1) bus admittance matrix, slack first."""
        top = np.r_[self.Y00, self.Y0L]
        bottom = np.column_stack([self.YL0, self.YLL.toarray()])
        return np.vstack([top, bottom])


def build_full_admittance(case: NetworkCase) -> sp.csc_matrix:
    """Sparse bus admittance matrix (slack first), MATPOWER pi-model with taps."""
    ys = 1.0 / case.impedance
    bc = 1j * case.charging / 2.0
    t = case.tap
    ytt = ys + bc
    yff = ytt / t**2
    yft = -ys / t
    f, to = case.from_bus, case.to_bus
    nb = case.n + 1
    rows = np.r_[f, to, f, to, np.arange(nb)]
    cols = np.r_[f, to, to, f, np.arange(nb)]
    vals = np.r_[yff, ytt, yft, yft, case.shunt]
    return sp.coo_matrix((vals, (rows, cols)), shape=(nb, nb)).tocsc()


def build_admittance(case: NetworkCase) -> AdmittancePartition:
    """Assemble Y and split off the slack row/column."""
    Y = build_full_admittance(case)
    YLL = Y[1:, 1:].tocsc()
    lu = spla.splu(YLL)
    diag_u = np.abs(lu.U.diagonal())
    if diag_u.min() == 0 or diag_u.min() / diag_u.max() < 1e-14:
        cond = np.inf if diag_u.min() == 0 else diag_u.max() / diag_u.min()
        raise DegenerateFeederError(f"YLL is singular (pivot ratio estimate {cond:.3g})")
    return AdmittancePartition(
        Y00=complex(Y[0, 0]),
        Y0L=Y[0, 1:].toarray().ravel(),
        YL0=Y[1:, 0].toarray().ravel(),
        YLL=YLL,
        _lu=lu,
    )


@dataclass(frozen=True)
class LinearPowerFlowModel:
    """Linear maps ``v ~ w + A @ [Re s; Im s]`` and ``|v| ~ |w| + C @ [Re s; Im s]``.

    ``Yslack`` carries ``Y00``/``Y0L`` and ``v0`` so the slack-power block can be
    written against the same object.
    """

    w: np.ndarray
    A: np.ndarray  # complex (n, 2n)
    C: np.ndarray  # real (n, 2n)
    v0: complex
    Y00: complex
    Y0L: np.ndarray

    @property
    def n(self) -> int:
        return len(self.w)

    def voltage(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=complex)
        return self.w + self.A @ np.r_[s.real, s.imag]

    def magnitude(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=complex)
        return np.abs(self.w) + self.C @ np.r_[s.real, s.imag]

    def slack_power(self, v: np.ndarray) -> complex:
        """Exact slack injection ``v0 * conj(Y00 v0 + Y0L v)`` (linear in v)."""
        return complex(self.v0 * np.conj(self.Y00 * self.v0 + self.Y0L @ v))


def build_linear_model(part: AdmittancePartition, v0: complex) -> LinearPowerFlowModel:
    n = part.n
    w = -part.solve(part.YL0 * v0)
    if np.min(np.abs(w)) < 1e-6:
        raise DegenerateFeederError("zero-load voltage below 1e-6 p.u.")
    # A = YLL^{-1} diag(1/conj(w)) [I, -jI]
    B = part.solve(np.diag(1.0 / np.conj(w)))
    A = np.hstack([B, -1j * B])
    C = np.real((np.conj(w) / np.abs(w))[:, None] * A)
    return LinearPowerFlowModel(w=w, A=A, C=C, v0=complex(v0), Y00=part.Y00, Y0L=part.Y0L)


# ---------------------------------------------------------------------------
# AC oracle


@dataclass(frozen=True)
class ACSolution:
    v: np.ndarray  # non-slack voltages
    s: np.ndarray  # non-slack injections used
    s0: complex  # slack injection
    iterations: int
    residual: float


def solve_ac_power_flow(
    case: NetworkCase,
    part: AdmittancePartition | None = None,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> ACSolution:
    """Z-bus fixed point ``v <- w + YLL^{-1} conj(s / v)``."""
    if part is None:
        part = build_admittance(case)
    v0 = case.v0
    s = case.injection
    w = -part.solve(part.YL0 * v0)
    v = w.copy()
    for it in range(1, max_iter + 1):
        v_new = w + part.solve(np.conj(s / v))
        step = np.max(np.abs(v_new - v))
        v = v_new
        if not np.all(np.isfinite(v)):
            break
        if step <= tol:
            s0 = complex(v0 * np.conj(part.Y00 * v0 + part.Y0L @ v))
            return ACSolution(v=v, s=s, s0=s0, iterations=it, residual=float(step))
    raise PowerFlowDivergence(f"fixed point did not converge in {max_iter} iterations")


def power_mismatch(case: NetworkCase, v: np.ndarray, s0: complex | None = None) -> np.ndarray:
    """Per-bus complex mismatch ``V conj(Y V) - S`` with the slack first.

    When ``s0`` is None the slack entry is reported as zero.
    """
    Y = build_full_admittance(case)
    V = np.r_[case.v0, v]
    S = np.r_[0.0 if s0 is None else s0, case.injection]
    mis = V * np.conj(Y @ V) - S
    if s0 is None:
        mis[0] = 0.0
    return mis


# ---------------------------------------------------------------------------
# synthetic feeder


def synthetic_feeder(
    n_bus: int = 533,
    seed: int = 533,
    target_vmin: float = 0.93,
    base_mva: float = 10.0,
) -> NetworkCase:
    """Seeded radial feeder used in place of the unpublished 533-bus case.

    A random recursive tree with a preference for extending recent buses
    (long laterals, like real feeders); line impedances drawn around 0.3+0.25j
    ohm/segment at 12.47 kV; about 70% of buses carry a 0.85 pf load.  Loads
    are then scaled so the AC solution's minimum voltage is ``target_vmin``.
    """
    rng = np.random.default_rng(seed)
    parent = np.zeros(n_bus, dtype=int)
    for k in range(1, n_bus):
        lo = max(0, k - 8)
        parent[k] = rng.integers(lo, k) if rng.random() < 0.85 else rng.integers(0, k)
    zbase = 12.47**2 / base_mva
    r = rng.uniform(0.05, 0.35, n_bus - 1) / zbase
    x = r * rng.uniform(0.6, 1.0, n_bus - 1)
    kva = np.where(rng.random(n_bus) < 0.7, rng.choice([25, 37.5, 50, 75, 100], n_bus), 0.0)
    kva[0] = 0.0
    p = kva / 1e3 * 0.85
    q = kva / 1e3 * np.sin(np.arccos(0.85))
    bus = np.zeros((n_bus, 9))
    bus[:, BUS_I] = np.arange(1, n_bus + 1)
    bus[:, BUS_TYPE] = PQ
    bus[0, BUS_TYPE] = REF
    bus[:, PD], bus[:, QD], bus[:, VM] = p, q, 1.0
    branch = np.zeros((n_bus - 1, 11))
    branch[:, F_BUS] = parent[1:] + 1
    branch[:, T_BUS] = np.arange(2, n_bus + 1)
    branch[:, BR_R], branch[:, BR_X], branch[:, BR_STATUS] = r, x, 1
    case = _build_case(bus, branch, base_mva, f"synthetic{n_bus}")

    part = build_admittance(case)
    lo, hi = 0.0, 1.0
    while True:  # grow until the target is bracketed or the feeder collapses
        try:
            vmin = np.abs(solve_ac_power_flow(case.scaled(hi), part).v).min()
        except PowerFlowDivergence:
            break
        if vmin < target_vmin:
            break
        lo, hi = hi, hi * 2
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        try:
            vmin = np.abs(solve_ac_power_flow(case.scaled(mid), part).v).min()
        except PowerFlowDivergence:
            vmin = 0.0
        lo, hi = (mid, hi) if vmin > target_vmin else (lo, mid)
    return case.scaled(lo)
