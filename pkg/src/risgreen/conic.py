"""Small conic-program builder bound to the Clarabel interior-point solver.

A :class:`ConicProblem` is a linear objective over a flat real vector
``x`` and a list of constraints ``A x + b in K`` with ``K`` one of the
zero, non-negative, second-order or PSD cones. Complex Hermitian matrix
variables are stored with ``n*n`` real coordinates (see
:class:`HermitianBlock`) and made PSD through their real embedding
``[[Re X, -Im X], [Im X, Re X]]``.

PSD cones use the packed upper triangle in column-major order with
off-diagonal entries scaled by sqrt(2), which is the convention Clarabel
expects for ``PSDTriangleConeT``.

Two backends are available. Clarabel handles any problem, but its KKT
system carries a dense block per PSD cone, which gets slow once a
Hermitian block has more than about ten rows. Problems in standard form
(every variable either non-negative or inside a Hermitian PSD block, the
remaining constraints affine) can instead go to cvxopt's ``conelp``,
which only factors a Schur complement the size of the equality count.
``backend="auto"`` picks cvxopt for standard-form problems with PSD
blocks and falls back to Clarabel whenever cvxopt does not return an
optimum, infeasibility certificates included.

Dump format (``dump_problem``): a line-oriented text listing ::

    vars <n>
    block <name> <start> <stop>
    objective <constant>
    c <col> <value>
    q <col> <value>              # diagonal quadratic term 0.5*value*x[col]**2
    cone <zero|nonneg|soc|psd> <dim> <rows>
    a <row> <col> <value>        # row local to the preceding cone
    b <row> <value>
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache

import clarabel
import numpy as np
import scipy.sparse as sp
from cvxopt import matrix as cvx_matrix
from cvxopt import solvers as cvx_solvers

__all__ = [
    "ConeKind",
    "ConicStatus",
    "SolverTolerances",
    "HermitianBlock",
    "ConicProblem",
    "ConicSolution",
    "embed_hermitian",
    "solve",
    "dump_problem",
]

SQRT2 = np.sqrt(2.0)
LOOSEST_RETRY_TOL = 1e-6


class ConeKind(str, enum.Enum):
    ZERO = "zero"
    NONNEG = "nonneg"
    SOC = "soc"
    PSD = "psd"


class ConicStatus(enum.Enum):
    OPTIMAL = "optimal"
    PRIMAL_INFEASIBLE = "primal_infeasible"
    DUAL_INFEASIBLE = "dual_infeasible"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class SolverTolerances:
    feasibility: float = 1e-8
    gap: float = 1e-8
    max_iterations: int = 200


def embed_hermitian(H: np.ndarray) -> np.ndarray:
    """Real symmetric embedding ``[[Re H, -Im H], [Im H, Re H]]``.

    Its spectrum is that of ``H`` with every eigenvalue doubled in
    multiplicity, so ``H >= 0`` iff the embedding is PSD.
    """
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("expected a square matrix")
    if np.max(np.abs(H - H.conj().T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(H), initial=0.0)):
        raise ValueError("matrix is not Hermitian")
    re, im = H.real, H.imag
    return np.block([[re, -im], [im, re]])


@dataclass
class HermitianBlock:
    """``side x side`` Hermitian matrix stored in ``side**2`` real variables.

    Local layout: the ``side`` diagonal entries, then the real parts of the
    strict upper triangle, then its imaginary parts (``np.triu_indices``
    order for both).
    """

    name: str
    offset: int
    side: int

    def __post_init__(self) -> None:
        n = self.side
        self.iu = np.triu_indices(n, 1)
        npairs = len(self.iu[0])
        self.diag_local = np.arange(n)
        self.re_local = n + np.arange(npairs)
        self.im_local = n + npairs + np.arange(npairs)
        self.pair = np.full((n, n), -1, dtype=int)
        self.pair[self.iu] = np.arange(npairs)

    @property
    def size(self) -> int:
        return self.side * self.side

    @property
    def indices(self) -> np.ndarray:
        return self.offset + np.arange(self.size)

    def diag_index(self, i) -> np.ndarray:
        return self.offset + np.asarray(i)

    def trace_coeffs(self, C: np.ndarray) -> np.ndarray:
        """Coefficients ``g`` with ``g @ x == Re Tr(C X)``; ``C`` may be a stack."""
        C = np.asarray(C)
        single = C.ndim == 2
        C = C[None] if single else C
        i, j = self.iu
        out = np.empty((C.shape[0], self.size))
        out[:, self.diag_local] = np.real(np.diagonal(C, axis1=1, axis2=2))
        cij, cji = C[:, i, j], C[:, j, i]
        out[:, self.re_local] = cij.real + cji.real
        out[:, self.im_local] = cij.imag - cji.imag
        return out[0] if single else out

    def frobenius_weights(self) -> np.ndarray:
        """Weights ``s`` with ``||X||_F^2 == sum((s * x)**2)``."""
        s = np.full(self.size, SQRT2)
        s[self.diag_local] = 1.0
        return s

    def to_matrix(self, x_local: np.ndarray) -> np.ndarray:
        n = self.side
        X = np.zeros((n, n), complex)
        X[np.diag_indices(n)] = x_local[self.diag_local]
        i, j = self.iu
        upper = x_local[self.re_local] + 1j * x_local[self.im_local]
        X[i, j] = upper
        X[j, i] = upper.conj()
        return X

    def from_matrix(self, X: np.ndarray) -> np.ndarray:
        x = np.empty(self.size)
        x[self.diag_local] = np.real(np.diag(X))
        upper = X[self.iu]
        x[self.re_local] = upper.real
        x[self.im_local] = upper.imag
        return x

    def psd_map(self) -> sp.csr_matrix:
        """Sparse map from local coordinates to the packed embedding."""
        return _psd_map(self.side)


@lru_cache(maxsize=64)
def _psd_map(n: int) -> sp.csr_matrix:
    blk = HermitianBlock("_", 0, n)
    npairs = len(blk.iu[0])
    rows, cols, vals = [], [], []
    row = 0
    for c in range(2 * n):
        for r in range(c + 1):
            scale = 1.0 if r == c else SQRT2
            if c < n or r >= n:  # Re block
                a, b = (r, c) if c < n else (r - n, c - n)
                if a == b:
                    rows.append(row); cols.append(a); vals.append(scale)
                else:
                    rows.append(row); cols.append(n + blk.pair[a, b]); vals.append(scale)
            else:  # upper-right block: -Im X[r, c-n]
                a, b = r, c - n
                if a < b:
                    rows.append(row); cols.append(n + npairs + blk.pair[a, b]); vals.append(-scale)
                elif a > b:
                    rows.append(row); cols.append(n + npairs + blk.pair[b, a]); vals.append(scale)
            row += 1
    m = sp.csr_matrix((vals, (rows, cols)), shape=(row, n * n))
    m.sort_indices()
    return m


@dataclass
class _Constraint:
    kind: ConeKind
    dim: int
    A: sp.coo_matrix  # (dim, width at creation time)
    b: np.ndarray
    membership: bool = False  # declares a variable block to lie in the cone


class ConicProblem:
    """Builder for ``minimize c@x + c0  s.t.  A_i x + b_i in K_i``."""

    def __init__(self) -> None:
        self.num_vars = 0
        self.blocks: dict[str, slice] = {}
        self.hermitian: dict[str, HermitianBlock] = {}
        self.constraints: list[_Constraint] = []
        self._objective: dict[int, float] = {}
        self._quadratic: dict[int, float] = {}
        self.objective_constant = 0.0

    # ---- variables ----
    def add_variable(self, name: str, size: int, nonneg: bool = False) -> np.ndarray:
        if name in self.blocks:
            raise ValueError(f"duplicate block {name!r}")
        sl = slice(self.num_vars, self.num_vars + size)
        self.blocks[name] = sl
        self.num_vars += size
        idx = np.arange(sl.start, sl.stop)
        if nonneg and size:
            self.add_constraint(ConeKind.NONNEG, [(idx, sp.identity(size))], 0.0)
            self.constraints[-1].membership = True
        return idx

    def add_hermitian(self, name: str, side: int, psd: bool = True) -> HermitianBlock:
        idx = self.add_variable(name, side * side)
        blk = HermitianBlock(name, int(idx[0]) if side else self.num_vars, side)
        self.hermitian[name] = blk
        if psd and side:
            self.add_constraint(ConeKind.PSD, [(blk.indices, blk.psd_map())], 0.0, dim=2 * side)
            self.constraints[-1].membership = True
        return blk

    # ---- constraints / objective ----
    def add_constraint(self, kind: ConeKind, terms, constant, dim: int | None = None) -> None:
        """Add ``sum_t M_t x[idx_t] + constant in K``.

        ``terms`` is a list of ``(idx, M)`` with ``M`` of shape
        ``(rows, len(idx))`` (dense or sparse) or a 1-D row for one row.
        For PSD cones ``dim`` is the matrix side, otherwise the row count.
        """
        kind = ConeKind(kind)
        mats = []
        nrows = None
        for idx, M in terms:
            idx = np.asarray(idx, dtype=int)
            M = sp.coo_matrix(np.atleast_2d(M) if not sp.issparse(M) else M)
            if M.shape[1] != idx.size:
                raise ValueError("term matrix width does not match its index list")
            nrows = M.shape[0] if nrows is None else nrows
            if M.shape[0] != nrows:
                raise ValueError("terms disagree on the number of rows")
            mats.append(sp.coo_matrix((M.data, (M.row, idx[M.col])), shape=(nrows, self.num_vars)))
        if nrows is None:
            raise ValueError("constraint needs at least one term")
        A = mats[0]
        for extra in mats[1:]:
            A = A + extra
        b = np.broadcast_to(np.asarray(constant, dtype=float), (nrows,)).copy()
        if kind is ConeKind.PSD:
            side = int(dim)
            if side * (side + 1) // 2 != nrows:
                raise ValueError("PSD constraint rows do not match the packed side length")
            cdim = side
        else:
            cdim = nrows if dim is None else int(dim)
            if cdim != nrows:
                raise ValueError("cone dimension does not match the row count")
        self.constraints.append(_Constraint(kind, cdim, sp.coo_matrix(A), b))

    def set_objective(self, terms, constant: float = 0.0) -> None:
        self._objective = {}
        for idx, coeffs in terms:
            for i, v in zip(np.asarray(idx, dtype=int), np.broadcast_to(coeffs, np.shape(idx))):
                self._objective[int(i)] = self._objective.get(int(i), 0.0) + float(v)
        self.objective_constant = float(constant)

    def set_quadratic(self, idx, weights) -> None:
        """Add ``0.5 * sum(weights * x[idx]**2)`` to the objective (Clarabel only)."""
        for i, v in zip(np.asarray(idx, dtype=int), np.broadcast_to(weights, np.shape(idx))):
            if v < 0:
                raise ValueError("quadratic weights must be non-negative")
            self._quadratic[int(i)] = self._quadratic.get(int(i), 0.0) + float(v)

    def quadratic_matrix(self) -> sp.csc_matrix:
        n = self.num_vars
        if not self._quadratic:
            return sp.csc_matrix((n, n))
        idx = np.fromiter(self._quadratic, dtype=int)
        return sp.csc_matrix((np.fromiter(self._quadratic.values(), float), (idx, idx)), shape=(n, n))

    def objective_value(self, x: np.ndarray) -> float:
        val = float(self.objective_vector() @ x) + self.objective_constant
        for i, v in self._quadratic.items():
            val += 0.5 * v * x[i] ** 2
        return val

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self.num_vars)
        for i, v in self._objective.items():
            c[i] = v
        return c

    def assemble(self) -> tuple[np.ndarray, sp.csc_matrix, np.ndarray, list[tuple[ConeKind, int]]]:
        n = self.num_vars
        blocks, bs, cones = [], [], []
        for con in self.constraints:
            A = con.A
            if A.shape[1] < n:
                A = sp.coo_matrix((A.data, (A.row, A.col)), shape=(A.shape[0], n))
            blocks.append(A)
            bs.append(con.b)
            cones.append((con.kind, con.dim))
        A = sp.vstack(blocks, format="csc") if blocks else sp.csc_matrix((0, n))
        b = np.concatenate(bs) if bs else np.zeros(0)
        return self.objective_vector(), A, b, cones


@dataclass
class ConicSolution:
    status: ConicStatus
    x: np.ndarray | None
    objective: float = float("nan")
    dual_objective: float = float("nan")
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    iterations: int = 0
    blocks: dict = field(default_factory=dict)
    hermitian: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is ConicStatus.OPTIMAL

    def value(self, name: str) -> np.ndarray:
        return self.x[self.blocks[name]]

    def matrix(self, name: str) -> np.ndarray:
        blk = self.hermitian[name]
        return blk.to_matrix(self.x[self.blocks[name]])


def _clarabel_cone(kind: ConeKind, dim: int):
    if kind is ConeKind.ZERO:
        return clarabel.ZeroConeT(dim)
    if kind is ConeKind.NONNEG:
        return clarabel.NonnegativeConeT(dim)
    if kind is ConeKind.SOC:
        return clarabel.SecondOrderConeT(dim)
    return clarabel.PSDTriangleConeT(dim)


_S = clarabel.SolverStatus


def solve(problem: ConicProblem, tol: SolverTolerances | None = None,
          backend: str = "auto") -> ConicSolution:
    """Solve ``problem``; infeasibility is reported only with a certificate.

    ``backend`` is ``"auto"``, ``"clarabel"`` or ``"cvxopt"``. The cvxopt
    path needs a standard-form problem (see module docstring). With
    ``"auto"``, a numerical failure is retried with tolerances loosened
    tenfold, down to ``LOOSEST_RETRY_TOL``.
    """
    tol = tol or SolverTolerances()
    if backend not in ("auto", "clarabel", "cvxopt"):
        raise ValueError(f"unknown backend {backend!r}")
    sol = _solve_once(problem, tol, backend)
    # interior-point methods on larger PSD blocks sometimes stall short of
    # tight tolerances; retry looser rather than report a failure
    while (backend == "auto" and sol.status is ConicStatus.NUMERICAL_FAILURE
           and tol.feasibility < LOOSEST_RETRY_TOL):
        tol = SolverTolerances(min(10 * tol.feasibility, LOOSEST_RETRY_TOL),
                               min(10 * tol.gap, LOOSEST_RETRY_TOL), tol.max_iterations)
        sol = _solve_once(problem, tol, backend)
    return sol


def _solve_once(problem: ConicProblem, tol: SolverTolerances, backend: str) -> ConicSolution:
    if backend == "clarabel":
        return _solve_clarabel(problem, tol)
    standard = None if problem._quadratic else _standard_form(problem)
    if standard is None:
        if backend == "cvxopt":
            raise ValueError("problem is not in standard form")
        return _solve_clarabel(problem, tol)
    if backend == "auto" and not standard.psd_sides:
        return _solve_clarabel(problem, tol)
    sol = _solve_cvxopt(problem, standard, tol)
    # cvxopt occasionally certifies infeasibility of badly scaled problems
    # that are feasible, so every non-optimal outcome is confirmed
    if not sol.optimal and backend == "auto":
        return _solve_clarabel(problem, tol)
    return sol


def _solution(problem, status, x, c, **kw) -> ConicSolution:
    kw.setdefault("objective", problem.objective_value(x) if x is not None else float("nan"))
    return ConicSolution(status=status, x=x, blocks=dict(problem.blocks),
                         hermitian=dict(problem.hermitian), **kw)


def _solve_clarabel(problem: ConicProblem, tol: SolverTolerances) -> ConicSolution:
    c, A, b, cones = problem.assemble()
    n = problem.num_vars
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_feas = tol.feasibility
    settings.tol_gap_abs = tol.gap
    settings.tol_gap_rel = tol.gap
    settings.max_iter = tol.max_iterations
    # static regularization stalls the PSD path a couple of digits early
    settings.static_regularization_enable = not any(k is ConeKind.PSD for k, _ in cones)
    # Clarabel solves  A x + s = b, s in K;  our rows read  A x + b in K
    solver = clarabel.DefaultSolver(sp.triu(problem.quadratic_matrix(), format="csc"), c, sp.csc_matrix(-A), b,
                                    [_clarabel_cone(k, d) for k, d in cones], settings)
    sol = solver.solve()
    x = np.asarray(sol.x, dtype=float)
    st = sol.status
    if st == _S.Solved:
        status = ConicStatus.OPTIMAL
    elif st == _S.AlmostSolved and max(sol.r_prim, sol.r_dual) <= tol.feasibility:
        status = ConicStatus.OPTIMAL
    elif st == _S.PrimalInfeasible:
        status = ConicStatus.PRIMAL_INFEASIBLE
    elif st == _S.DualInfeasible:
        status = ConicStatus.DUAL_INFEASIBLE
    else:
        status = ConicStatus.NUMERICAL_FAILURE
    c0 = problem.objective_constant
    return _solution(
        problem, status, x if x.size == n else None, c,
        objective=float(sol.obj_val) + c0,
        dual_objective=float(sol.obj_val_dual) + c0,
        primal_residual=float(sol.r_prim),
        dual_residual=float(sol.r_dual),
        iterations=int(sol.iterations),
    )


@dataclass
class _StandardForm:
    T: sp.csr_matrix           # x = T z
    eq_A: sp.csr_matrix        # eq_A z + eq_b = 0
    eq_b: np.ndarray
    num_l: int
    soc_dims: list
    psd_sides: list            # embedding sides (2n)


def _hermitian_reader(blk: HermitianBlock, zoff: int) -> sp.coo_matrix:
    """Rows map the full column-major embedding ``Z`` to the block's coordinates."""
    n, N = blk.side, 2 * blk.side
    rows, cols, vals = [], [], []

    def put(r, a, b, v):
        rows.append(r); cols.append(zoff + a + b * N); vals.append(v)

    for i in range(n):
        put(i, i, i, 0.5); put(i, i + n, i + n, 0.5)
    for p, (i, j) in enumerate(zip(*blk.iu)):
        r = blk.re_local[p]
        for a, b in ((i, j), (j, i), (i + n, j + n), (j + n, i + n)):
            put(r, a, b, 0.25)
        r = blk.im_local[p]
        put(r, i + n, j, 0.25); put(r, j, i + n, 0.25)
        put(r, i, j + n, -0.25); put(r, j + n, i, -0.25)
    return sp.coo_matrix((vals, (rows, cols)), shape=(blk.size, zoff + N * N))


def _standard_form(problem: ConicProblem) -> _StandardForm | None:
    n = problem.num_vars
    owner = np.full(n, -1)
    for ci, con in enumerate(problem.constraints):
        if not con.membership:
            continue
        cols = np.unique(con.A.col)
        if np.any(owner[cols] >= 0):
            return None
        owner[cols] = ci
    if np.any(owner < 0):
        return None
    if any(con.kind is ConeKind.PSD and not con.membership for con in problem.constraints):
        return None

    # z layout: [nonneg vars | nonneg slacks] [soc slacks] [psd embeddings]
    nonneg_cols = [np.unique(c.A.col) for c in problem.constraints
                   if c.membership and c.kind is ConeKind.NONNEG]
    nonneg_idx = np.concatenate(nonneg_cols) if nonneg_cols else np.zeros(0, int)
    slack_l = [c for c in problem.constraints if not c.membership and c.kind is ConeKind.NONNEG]
    slack_q = [c for c in problem.constraints if not c.membership and c.kind is ConeKind.SOC]
    num_l = nonneg_idx.size + sum(c.dim for c in slack_l)
    soc_dims = [c.dim for c in slack_q]
    zoff = num_l + sum(soc_dims)
    psd_blocks = [blk for blk in problem.hermitian.values()
                  if blk.side and owner[blk.offset] >= 0
                  and problem.constraints[owner[blk.offset]].kind is ConeKind.PSD]
    psd_sides = []
    T_rows, T_cols, T_vals = list(nonneg_idx), list(range(nonneg_idx.size)), [1.0] * nonneg_idx.size
    for blk in psd_blocks:
        R = _hermitian_reader(blk, zoff)
        T_rows += list(blk.offset + R.row); T_cols += list(R.col); T_vals += list(R.data)
        zoff += (2 * blk.side) ** 2
        psd_sides.append(2 * blk.side)
    dim_z = zoff
    T = sp.csr_matrix((T_vals, (T_rows, T_cols)), shape=(n, dim_z))

    eq_rows, eq_b = [], []
    s_off = nonneg_idx.size
    q_off = num_l
    for con in problem.constraints:
        if con.membership:
            continue
        A = sp.csr_matrix((con.A.data, (con.A.row, con.A.col)), shape=(con.A.shape[0], n))
        AT = A @ T
        if con.kind is ConeKind.ZERO:
            eq_rows.append(AT)
        else:
            off = s_off if con.kind is ConeKind.NONNEG else q_off
            S = sp.csr_matrix((np.ones(con.dim), (np.arange(con.dim), off + np.arange(con.dim))),
                              shape=(con.dim, dim_z))
            eq_rows.append(AT - S)
            if con.kind is ConeKind.NONNEG:
                s_off += con.dim
            else:
                q_off += con.dim
        eq_b.append(con.b)
    eq_A = sp.vstack(eq_rows, format="csr") if eq_rows else sp.csr_matrix((0, dim_z))
    eq_b = np.concatenate(eq_b) if eq_b else np.zeros(0)
    return _StandardForm(T, eq_A, eq_b, num_l, soc_dims, psd_sides)


def _solve_cvxopt(problem: ConicProblem, sf: _StandardForm, tol: SolverTolerances) -> ConicSolution:
    # Our problem  min h.z  s.t. eq_A z + eq_b = 0, z in K  is the dual of
    # cvxopt's  min eq_b.y  s.t.  eq_A^T y + s = h, s in K.
    c = problem.objective_vector()
    h = sf.T.T @ c
    G = sf.eq_A.T.toarray()
    dims = {"l": sf.num_l, "q": sf.soc_dims, "s": sf.psd_sides}
    opts = {"show_progress": False, "abstol": tol.gap, "reltol": tol.gap,
            "feastol": tol.feasibility, "maxiters": tol.max_iterations}
    if G.shape[1] == 0:
        return _solve_clarabel(problem, tol)
    try:
        sol = cvx_solvers.conelp(cvx_matrix(sf.eq_b), cvx_matrix(G), cvx_matrix(h), dims, options=opts)
    except (ArithmeticError, ValueError):
        return _solution(problem, ConicStatus.NUMERICAL_FAILURE, None, c)
    z = np.asarray(sol["z"]).ravel() if sol["z"] is not None else None
    res_p = sol.get("dual infeasibility") or float("nan")
    res_d = sol.get("primal infeasibility") or float("nan")
    st = sol["status"]
    if st == "optimal":
        status = ConicStatus.OPTIMAL
    elif st == "dual infeasible":
        status, z = ConicStatus.PRIMAL_INFEASIBLE, None
    elif st == "primal infeasible":
        status, z = ConicStatus.DUAL_INFEASIBLE, None
    else:
        status = ConicStatus.NUMERICAL_FAILURE
    x = sf.T @ z if z is not None else None
    c0 = problem.objective_constant
    dual = sol.get("primal objective")
    return _solution(
        problem, status, x, c,
        dual_objective=-float(dual) + c0 if dual is not None else float("nan"),
        primal_residual=float(res_p), dual_residual=float(res_d),
        iterations=int(sol.get("iterations") or 0),
    )


def dump_problem(problem: ConicProblem) -> str:
    c, A, b, cones = problem.assemble()
    lines = [f"vars {problem.num_vars}"]
    lines += [f"block {name} {sl.start} {sl.stop}" for name, sl in problem.blocks.items()]
    lines.append(f"objective {problem.objective_constant!r}")
    lines += [f"c {i} {float(v)!r}" for i, v in enumerate(c) if v != 0.0]
    lines += [f"q {i} {float(v)!r}" for i, v in sorted(problem._quadratic.items())]
    A = A.tocsr()
    start = 0
    for kind, dim in cones:
        rows = dim * (dim + 1) // 2 if kind is ConeKind.PSD else dim
        lines.append(f"cone {kind.value} {dim} {rows}")
        sub = A[start:start + rows].tocoo()
        lines += [f"a {r} {col} {float(v)!r}" for r, col, v in zip(sub.row, sub.col, sub.data)]
        lines += [f"b {r} {float(v)!r}" for r, v in enumerate(b[start:start + rows]) if v != 0.0]
        start += rows
    return "\n".join(lines) + "\n"
