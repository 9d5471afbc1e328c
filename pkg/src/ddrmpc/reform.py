"""Affine disturbance-feedback policies and their robust counterparts.

Each scalar robust inequality

    d'z + d0 + max_{eta in D_eta} a_eta' eta
             + max_{(xi+, xi-) lifted set} (a_+' xi+ + a_-' xi-)  <=  rhs

is made deterministic by replacing both maxima with the objectives of
their LP duals (one dual block per inequality and per uncertainty group).
The coefficient vectors ``a`` are affine in the policy variables ``z``, so
the result stays linear in ``(z, duals)``.

Policies act on H inputs ``u[0..H-1]``; the gain from step ``j`` to input
``t`` is zero for ``j >= t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .dynamics import ConstraintSet, StackedDynamics
from .solver import ProgramBuilder, ProgramDescription, Solution, solve
from .svc import SvcModel
from .uncertainty import ConditionalSet, SvcSet

SLACK_PENALTY = 1e6


def tril_index(H: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column indices of the strictly lower-triangular entries of an H x H matrix."""
    return np.tril_indices(H, k=-1)


def tril_selector(H: int) -> np.ndarray:
    """``T[t, j, i] = 1`` if entry ``(t, j)`` is the i-th strictly lower entry."""
    r, c = tril_index(H)
    T = np.zeros((H, H, r.size))
    T[r, c, np.arange(r.size)] = 1.0
    return T


@dataclass(frozen=True)
class AdfPolicy:
    m_gain: np.ndarray
    h_offsets: np.ndarray

    def __post_init__(self):
        if np.any(np.triu(self.m_gain) != 0):
            raise ValueError("ADF gains must be strictly lower-triangular")

    def inputs(self, w) -> np.ndarray:
        return np.asarray(w) @ self.m_gain.T + self.h_offsets

    def to_gadf(self, C: np.ndarray, D: np.ndarray) -> "GadfPolicy":
        """Equivalent GADF policy: ``M+ = M C``, ``M- = -M D``, ``L = -M``."""
        M = self.m_gain
        return GadfPolicy(M @ C, -M @ D, -M, self.h_offsets.copy())


@dataclass(frozen=True)
class GadfPolicy:
    m_plus: np.ndarray
    m_minus: np.ndarray
    l_gain: np.ndarray
    h_offsets: np.ndarray

    def __post_init__(self):
        for name in ("m_plus", "m_minus", "l_gain"):
            if np.any(np.abs(np.triu(getattr(self, name))) > 0):
                raise ValueError(f"{name} must be strictly lower-triangular")

    def inputs(self, xi_plus, xi_minus, eta) -> np.ndarray:
        """Inputs for one or many (rows) uncertainty realizations."""
        return (np.asarray(xi_plus) @ self.m_plus.T + np.asarray(xi_minus) @ self.m_minus.T
                + np.asarray(eta) @ self.l_gain.T + self.h_offsets)


@dataclass(frozen=True)
class DualCertificate:
    lambdas: np.ndarray
    mus: np.ndarray
    k: float
    r: np.ndarray | None = None
    s: np.ndarray | None = None


@dataclass
class RobustConstraintBlock:
    """LP dual of one worst-case maximization over an SVC-based set.

    Dual variables ``y >= 0`` satisfy::

        A_eq y = b_eq + coef_eq @ coef
        A_ub y <= b_ub + coef_ub @ coef

    and ``cost @ y`` upper-bounds the worst case (equal at the optimum).
    ``coef`` is ``a`` (plain SVC block) or ``[a; b]`` (lifted block).
    """

    kind: str
    model: SvcModel
    n_vars: int
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    coef_eq: sp.csr_matrix
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    coef_ub: sp.csr_matrix
    cost: np.ndarray
    layout: dict = field(default_factory=dict)
    coef: np.ndarray | None = None

    @property
    def n_coef(self) -> int:
        return self.coef_eq.shape[1]

    def certificate(self, y: np.ndarray) -> DualCertificate:
        n, H = self.model.n_sv, self.model.dim
        lay = self.layout
        lam = y[lay["lam"]].reshape(n, H)
        k = float(y[lay["k"]][0])
        mu = k * self.model.alphas[:, None] - lam
        r = y[lay["r"]] if "r" in lay else None
        s = y[lay["s"]] if "s" in lay else None
        return DualCertificate(lam, mu, k, r, s)

    def program(self, coef=None) -> ProgramDescription:
        coef = self.coef if coef is None else np.asarray(coef, float)
        if coef is None or coef.size != self.n_coef:
            raise ValueError(f"block needs a coefficient vector of length {self.n_coef}")
        return ProgramDescription(
            n=self.n_vars, lb=np.zeros(self.n_vars), ub=np.full(self.n_vars, np.inf),
            A_eq=self.A_eq, b_eq=self.b_eq + self.coef_eq @ coef,
            A_ub=self.A_ub, b_ub=self.b_ub + self.coef_ub @ coef,
            q=self.cost, name=f"{self.kind}_dual",
        )

    def solve(self, coef=None, backend: str = "clarabel") -> tuple[float, DualCertificate, Solution]:
        """Minimize the dual; returns ``(worst_case_value, certificate, solution)``."""
        sol = solve(self.program(coef), backend=backend, tol=1e-10)
        if not sol.ok:
            raise RuntimeError(f"dual block LP failed: {sol.status} ({sol.message})")
        return sol.objective, self.certificate(sol.x), sol


def _shared_parts(model: SvcModel):
    """Pieces common to both templates.

    Two eliminations keep the blocks small.  With ``lambda_i + mu_i = k
    alpha_i 1`` the multiplier ``mu`` is implied: ``mu >= 0`` becomes
    ``lambda - k alpha <= 0`` and ``lambda - mu`` becomes ``2 lambda - k
    alpha``.  The sum ``g = sum_i lambda_i`` gets its own variable so that
    ``Q'`` enters once per block instead of once per support vector.
    """
    n, H = model.n_sv, model.dim
    nl = n * H
    Qt = sp.csr_matrix(model.q_matrix.T)
    alpha_rep = np.repeat(model.alphas, H)
    S_alpha = (model.q_matrix.T @ np.ones(H)) * float(model.alphas.sum())
    QW = (model.sv_points @ model.q_matrix.T).ravel()
    k_cost = model.theta + float(alpha_rep @ QW)
    summer = sp.hstack([sp.kron(np.ones((1, n)), sp.identity(H)), -sp.identity(H)], format="csr")
    return nl, Qt, S_alpha.reshape(-1, 1), QW, k_cost, alpha_rep.reshape(-1, 1), summer


def _svc_template(model: SvcModel) -> RobustConstraintBlock:
    H = model.dim
    nl, Qt, sa, QW, k_cost, arep, summer = _shared_parts(model)
    # variable order: lam, g, k
    nv = nl + H + 1
    A_eq = sp.vstack([
        sp.hstack([summer, sp.csr_matrix((H, 1))]),
        sp.hstack([sp.csr_matrix((H, nl)), 2.0 * Qt, sp.csr_matrix(-sa)]),
    ], format="csr")
    coef_eq = sp.vstack([sp.csr_matrix((H, H)), -sp.identity(H)], format="csr")
    cap = sp.hstack([sp.identity(nl), sp.csr_matrix((nl, H)), sp.csr_matrix(-arep)],
                    format="csr")
    cost = np.concatenate([-2.0 * QW, np.zeros(H), [k_cost]])
    layout = {"lam": slice(0, nl), "g": slice(nl, nl + H), "k": slice(nl + H, nv)}
    return RobustConstraintBlock(
        "svc", model, nv, A_eq, np.zeros(2 * H), coef_eq,
        cap, np.zeros(nl), sp.csr_matrix((nl, H)), cost, layout,
    )


def _lifted_template(model: SvcModel) -> RobustConstraintBlock:
    H = model.dim
    nl, Qt, sa, QW, k_cost, arep, summer = _shared_parts(model)
    I_H = sp.identity(H, format="csr")
    Z_H = sp.csr_matrix((H, H))
    zl = sp.csr_matrix((H, nl))
    sa = sp.csr_matrix(sa)
    # variable order: lam, g, r, s, k
    nv = nl + 3 * H + 1
    A_eq = sp.hstack([summer, sp.csr_matrix((H, 2 * H + 1))], format="csr")
    A_ub = sp.vstack([
        sp.hstack([zl, 2.0 * Qt, -I_H, Z_H, -sa]),
        sp.hstack([zl, -2.0 * Qt, Z_H, -I_H, sa]),
        sp.hstack([sp.identity(nl), sp.csr_matrix((nl, 3 * H)), sp.csr_matrix(-arep)]),
    ], format="csr")
    coef_ub = sp.vstack([sp.hstack([-I_H, Z_H]), sp.hstack([Z_H, -I_H]),
                         sp.csr_matrix((nl, 2 * H))], format="csr")
    cost = np.concatenate([-2.0 * QW, np.zeros(H), np.ones(2 * H), [k_cost]])
    layout = {
        "lam": slice(0, nl), "g": slice(nl, nl + H), "r": slice(nl + H, nl + 2 * H),
        "s": slice(nl + 2 * H, nl + 3 * H), "k": slice(nl + 3 * H, nv),
    }
    return RobustConstraintBlock(
        "lifted", model, nv, A_eq, np.zeros(H), sp.csr_matrix((H, 2 * H)),
        A_ub, np.zeros(2 * H + nl), coef_ub, cost, layout,
    )


def svc_dual_block(a, eta_model: SvcModel) -> RobustConstraintBlock:
    """Dual block whose optimum equals ``max a'eta`` over the SVC set."""
    if eta_model.n_sv == 0:
        raise ValueError("model has no support vectors")
    block = _svc_template(eta_model)
    block.coef = np.asarray(a, float).ravel()
    return block


def lifted_dual_block(a, b, xibar_model: SvcModel) -> RobustConstraintBlock:
    """Dual block whose optimum equals ``max a'xi+ + b'xi-`` over the lifted set."""
    if xibar_model.n_sv == 0:
        raise ValueError("model has no support vectors")
    block = _lifted_template(xibar_model)
    block.coef = np.concatenate([np.ravel(a), np.ravel(b)]).astype(float)
    return block


# names used by the interface contract
lemma1_dual_block = svc_dual_block
theorem3_dual_block = lifted_dual_block


@dataclass(frozen=True)
class CostSpec:
    """Squared-irrigation stage loss plus an optional terminal state penalty.

    ``kind="expected"`` averages over the empirical second moments of the
    lifted uncertainty; ``kind="nominal"`` evaluates at zero disturbance.
    """

    kind: str = "expected"
    terminal_weight: float = 0.0

    def __post_init__(self):
        if self.kind not in ("nominal", "expected"):
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if self.terminal_weight < 0:
            raise ValueError("terminal_weight must be >= 0")


@dataclass
class RowSpec:
    """One scalar robust inequality ``d'z + d0 + sum_ch max(a_ch' zeta_ch) <= rhs``.

    ``coefs[ch] = (G, g)`` gives ``a_ch = G z + g``.
    """

    label: str
    step: int
    dz: np.ndarray
    d0: float
    rhs: float
    coefs: dict
    soft: bool = False

    def has(self, ch: str) -> bool:
        G, g = self.coefs[ch]
        return bool(np.any(G) or np.any(g))


@dataclass
class Channel:
    """An uncertainty group entering the inputs through policy gains.

    ``gains[t, k, :] @ z`` is the gain from component ``k`` to input ``t``;
    ``state_coef`` is the direct effect ``B_w S`` on the state trajectory.
    """

    name: str
    gains: np.ndarray
    state_coef: np.ndarray


def uncertain_rows(dyn: StackedDynamics, cons: ConstraintSet, x0: float, v, Gh: np.ndarray,
                   channels: list[Channel], n_active: int | None = None) -> list[RowSpec]:
    """State and input constraint rows as affine functions of ``z`` and the channels."""
    H = dyn.H
    n_act = H if n_active is None else int(n_active)
    v = np.asarray(v, float).ravel()
    if v.size != H:
        raise ValueError(f"forecast input has length {v.size}, expected {H}")
    Bu, Bv = dyn.Bu_stack, dyn.Bv_stack
    rows: list[RowSpec] = []
    for t in range(1, n_act + 1):
        dz = Bu[t] @ Gh
        d0 = float(dyn.A_stack[t, 0] * x0 + Bv[t] @ v)
        coefs = {}
        for ch in channels:
            G = np.einsum("j,jkz->kz", Bu[t], ch.gains)
            g = dyn.Bw_stack[t] @ ch.state_coef
            coefs[ch.name] = (G, g)
        neg = {k: (-G, -g) for k, (G, g) in coefs.items()}
        rows.append(RowSpec(f"xmin_{t}", t, -dz, -d0, -cons.x_min, neg, soft=True))
        if cons.x_max is not None:
            rows.append(RowSpec(f"xmax_{t}", t, dz, d0, cons.x_max, coefs, soft=True))
    for t in range(n_act):
        coefs = {ch.name: (ch.gains[t], np.zeros(H)) for ch in channels}
        neg = {k: (-G, -g) for k, (G, g) in coefs.items()}
        rows.append(RowSpec(f"umax_{t}", t, Gh[t].copy(), 0.0, cons.u_max, coefs))
        rows.append(RowSpec(f"umin_{t}", t, -Gh[t], 0.0, 0.0, neg))
    return rows


def _block_emit(builder: ProgramBuilder, template: RobustConstraintBlock, rows: list[RowSpec],
                coef_of, z_cols: np.ndarray, tag: str):
    """Replicate ``template`` once per row; return per-row dual column ranges."""
    R = len(rows)
    if R == 0:
        return []
    ny = template.n_vars
    Y = builder.add_variables(tag, R * ny, lb=0.0)
    I_R = sp.identity(R, format="csr")
    Gs, gs = zip(*(coef_of(r) for r in rows))
    G_all = np.vstack(Gs)
    g_all = np.concatenate(gs)
    for A, b, C, sense in ((template.A_eq, template.b_eq, template.coef_eq, "eq"),
                           (template.A_ub, template.b_ub, template.coef_ub, "ub")):
        if A.shape[0] == 0:
            continue
        big_A = sp.kron(I_R, A, format="csr")
        big_C = sp.kron(I_R, C, format="csr")
        rhs = np.tile(b, R) + big_C @ g_all
        builder.add_rows([(Y, big_A), (z_cols, -(big_C @ G_all))], sense, rhs)
    return [Y[i * ny:(i + 1) * ny] for i in range(R)]


@dataclass
class RobustProgram:
    program: ProgramDescription
    policy_kind: str
    H: int
    n_active: int
    z_cols: np.ndarray
    Gh: np.ndarray
    channels: list[Channel]
    rows: list[RowSpec]
    eta_blocks: dict = field(default_factory=dict)
    xi_blocks: dict = field(default_factory=dict)
    templates: dict = field(default_factory=dict)
    slack_cols: np.ndarray | None = None
    C: np.ndarray | None = None
    D: np.ndarray | None = None

    @property
    def n_variables(self) -> int:
        return self.program.n

    @property
    def n_constraints(self) -> int:
        return self.program.n_eq + self.program.n_ub

    def solve(self, backend: str = "clarabel", tol: float = 1e-8) -> Solution:
        return solve(self.program, backend=backend, tol=tol)

    def z(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x)[self.z_cols]

    def gadf_policy(self, x: np.ndarray) -> GadfPolicy:
        z = self.z(x)
        gains = {ch.name: np.einsum("tkz,z->tk", ch.gains, z) for ch in self.channels}
        H = self.H
        if self.policy_kind == "gadf":
            return GadfPolicy(gains["xi_plus"], gains["xi_minus"], gains["eta"], self.Gh @ z)
        return GadfPolicy(gains.get("xi_plus", np.zeros((H, H))),
                          gains.get("xi_minus", np.zeros((H, H))),
                          gains.get("eta", np.zeros((H, H))), self.Gh @ z)

    def adf_policy(self, x: np.ndarray) -> AdfPolicy:
        if self.policy_kind not in ("adf", "norm"):
            raise ValueError("not an ADF program")
        z = self.z(x)
        r, c = tril_index(self.H)
        M = np.zeros((self.H, self.H))
        M[r, c] = z[self.H:self.H + r.size]
        return AdfPolicy(M, self.Gh @ z)

    def first_input(self, x: np.ndarray) -> float:
        return float(self.Gh[0] @ self.z(x))

    def certificates(self, x: np.ndarray) -> dict:
        out = {}
        for label, cols in self.eta_blocks.items():
            out[(label, "eta")] = self.templates["eta"].certificate(np.asarray(x)[cols])
        for label, cols in self.xi_blocks.items():
            out[(label, "xi")] = self.templates["xi"].certificate(np.asarray(x)[cols])
        return out

    def slack_used(self, x: np.ndarray) -> float:
        if self.slack_cols is None or self.slack_cols.size == 0:
            return 0.0
        return float(np.sum(np.asarray(x)[self.slack_cols]))


def _add_cost(builder: ProgramBuilder, z_cols: np.ndarray, Gh: np.ndarray, channels,
              rows_dyn: StackedDynamics, x0: float, v: np.ndarray, cost: CostSpec,
              moments: np.ndarray | None, n_act: int, order: list[str]):
    """Quadratic cost ``sum_t E[u_t^2] + w_f E[x_H^2]`` in the policy variables."""
    H = Gh.shape[0]
    nz = Gh.shape[1]
    dim = len(order) * H + 1
    if cost.kind == "expected":
        if moments is None:
            raise ValueError("expected cost needs the second-moment matrix of the uncertainty")
        E = np.asarray(moments, float)
        if E.shape != (dim, dim):
            raise ValueError(f"moment matrix must be {dim}x{dim}, got {E.shape}")
    else:
        E = np.zeros((dim, dim))
        E[-1, -1] = 1.0
    by_name = {ch.name: ch for ch in channels}
    P = np.zeros((nz, nz))
    q = np.zeros(nz)
    const = 0.0
    for t in range(n_act):
        K = np.vstack([by_name[nm].gains[t] if nm in by_name else np.zeros((H, nz))
                       for nm in order] + [Gh[t][None, :]])
        P += 2.0 * K.T @ E @ K
    if cost.terminal_weight > 0:
        Bu = rows_dyn.Bu_stack[n_act]
        blocks, consts = [], []
        for nm in order:
            ch = by_name.get(nm)
            if ch is None:
                blocks.append(np.zeros((H, nz)))
                consts.append(np.zeros(H))
            else:
                blocks.append(np.einsum("j,jkz->kz", Bu, ch.gains))
                consts.append(rows_dyn.Bw_stack[n_act] @ ch.state_coef)
        K = np.vstack(blocks + [(Bu @ Gh)[None, :]])
        c = np.concatenate(consts + [[rows_dyn.A_stack[n_act, 0] * x0 + rows_dyn.Bv_stack[n_act] @ v]])
        w = cost.terminal_weight
        P += 2.0 * w * K.T @ E @ K
        q += 2.0 * w * K.T @ E @ c
        const += w * float(c @ E @ c)
    P = 0.5 * (P + P.T)
    builder.add_quadratic_cost(z_cols, P)
    builder.add_linear_cost(z_cols, q)
    builder.constant += const


LIFTED_ORDER = ["xi_plus", "xi_minus", "eta"]


def _policy_maps(H: int, kind: str, C: np.ndarray, D: np.ndarray):
    """Policy variables ``z`` and the channels they drive."""
    T = tril_selector(H)
    nt = T.shape[2]
    zero = np.zeros((H, H, nt))
    if kind == "gadf":
        nz = H + 3 * nt
        pad = lambda blk, pos: np.concatenate(  # noqa: E731
            [np.zeros((H, H, H))] + [blk if i == pos else zero for i in range(3)], axis=2)
        Gh = np.hstack([np.eye(H), np.zeros((H, 3 * nt))])
        channels = [
            Channel("xi_plus", pad(T, 0), C),
            Channel("xi_minus", pad(T, 1), -D),
            Channel("eta", pad(T, 2), -np.eye(H)),
        ]
        names = ["h"] * H + ["mp"] * nt + ["mm"] * nt + ["l"] * nt
    elif kind == "adf":
        nz = H + nt
        TT = np.concatenate([np.zeros((H, H, H)), T], axis=2)
        Gh = np.hstack([np.eye(H), np.zeros((H, nt))])
        channels = [
            Channel("xi_plus", TT * np.diag(C)[None, :, None], C),
            Channel("xi_minus", -TT * np.diag(D)[None, :, None], -D),
            Channel("eta", -TT, -np.eye(H)),
        ]
        names = ["h"] * H + ["m"] * nt
    else:
        raise ValueError(f"unknown policy kind {kind!r}")
    assert Gh.shape[1] == nz
    return Gh, channels, names


def _assemble(kind: str, dyn: StackedDynamics, cons: ConstraintSet, eta_set: SvcSet,
              xi_set: ConditionalSet, x0: float, v_forecast, cost: CostSpec,
              moments=None, soft: bool = False, n_active: int | None = None,
              fixed_z: np.ndarray | None = None) -> RobustProgram:
    H = dyn.H
    if eta_set.dim != H or xi_set.phat.size != H:
        raise ValueError(f"set dimensions ({eta_set.dim}, {xi_set.phat.size}) != horizon {H}")
    if eta_set.model.n_sv == 0 or xi_set.inner.model.n_sv == 0:
        raise ValueError("uncertainty sets must have support vectors")
    if not np.isfinite(x0):
        raise ValueError("initial state must be finite")
    n_act = H if n_active is None else int(n_active)
    v = np.asarray(v_forecast, float).ravel()
    C, D = xi_set.C, xi_set.D
    Gh, channels, zn = _policy_maps(H, kind, C, D)

    b = ProgramBuilder(f"ddrmpc_{kind}")
    z_cols = b.add_variables("pol", Gh.shape[1])
    if fixed_z is not None:
        b.add_rows([(z_cols, np.eye(z_cols.size))], "eq", np.asarray(fixed_z, float))
    rows = uncertain_rows(dyn, cons, x0, v, Gh, channels, n_act)
    t_eta = _svc_template(eta_set.model)
    t_xi = _lifted_template(xi_set.inner.model)

    eta_rows = [r for r in rows if r.has("eta")]
    xi_rows = [r for r in rows if r.has("xi_plus") or r.has("xi_minus")]
    eta_cols = _block_emit(b, t_eta, eta_rows, lambda r: r.coefs["eta"], z_cols, "deta")

    def xi_coef(r):
        (Gp, gp), (Gm, gm) = r.coefs["xi_plus"], r.coefs["xi_minus"]
        return np.vstack([Gp, Gm]), np.concatenate([gp, gm])

    xi_cols = _block_emit(b, t_xi, xi_rows, xi_coef, z_cols, "dxi")
    eta_map = {r.label: c for r, c in zip(eta_rows, eta_cols)}
    xi_map = {r.label: c for r, c in zip(xi_rows, xi_cols)}

    soft_rows = [r for r in rows if soft and r.soft]
    slack = b.add_variables("slack", len(soft_rows), lb=0.0) if soft_rows else np.zeros(0, int)
    slack_of = {r.label: slack[i] for i, r in enumerate(soft_rows)}
    for r in rows:
        terms = [(z_cols, r.dz[None, :])]
        if r.label in eta_map:
            terms.append((eta_map[r.label], t_eta.cost[None, :]))
        if r.label in xi_map:
            terms.append((xi_map[r.label], t_xi.cost[None, :]))
        if r.label in slack_of:
            terms.append(([slack_of[r.label]], [[-1.0]]))
        b.add_rows(terms, "ub", [r.rhs - r.d0])
    if slack.size:
        b.add_linear_cost(slack, np.full(slack.size, SLACK_PENALTY))
    _add_cost(b, z_cols, Gh, channels, dyn, x0, v, cost, moments, n_act, LIFTED_ORDER)
    return RobustProgram(b.build(), kind, H, n_act, z_cols, Gh, channels, rows,
                         eta_map, xi_map, {"eta": t_eta, "xi": t_xi}, slack, C, D)


def assemble_gadf_program(dyn, cons, eta_set, xi_set, x0, v_forecast, cost=CostSpec(),
                          moments=None, soft=False, n_active=None, fixed_z=None) -> RobustProgram:
    """Robust counterpart under the generalized (lifted) affine policy."""
    return _assemble("gadf", dyn, cons, eta_set, xi_set, x0, v_forecast, cost, moments, soft,
                     n_active, fixed_z)


def assemble_adf_program(dyn, cons, eta_set, xi_set, x0, v_forecast, cost=CostSpec(),
                         moments=None, soft=False, n_active=None, fixed_z=None) -> RobustProgram:
    """Robust counterpart under classic affine feedback on ``w = xi - eta``."""
    return _assemble("adf", dyn, cons, eta_set, xi_set, x0, v_forecast, cost, moments, soft,
                     n_active, fixed_z)


def gadf_z_from_adf(policy: AdfPolicy, C: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Policy vector of the GADF program equivalent to an ADF policy."""
    g = policy.to_gadf(C, D)
    r, c = tril_index(policy.m_gain.shape[0])
    return np.concatenate([g.h_offsets, g.m_plus[r, c], g.m_minus[r, c], g.l_gain[r, c]])


def propagate(dyn: StackedDynamics, policy: GadfPolicy, x0: float, v, C, D,
              xi_plus, xi_minus, eta) -> tuple[np.ndarray, np.ndarray]:
    """Closed-loop trajectories for many lifted realizations (rows).

    Returns ``(x, u)`` with shapes ``(n, H+1)`` and ``(n, H)``.
    """
    xp = np.atleast_2d(xi_plus)
    xm = np.atleast_2d(xi_minus)
    et = np.atleast_2d(eta)
    u = policy.inputs(xp, xm, et)
    w = xp @ C.T - xm @ D.T - et
    x = (dyn.A_stack[:, 0] * x0)[None, :] + u @ dyn.Bu_stack.T + (dyn.Bv_stack @ np.asarray(v))[None, :] \
        + w @ dyn.Bw_stack.T
    return x, u
