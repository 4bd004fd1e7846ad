"""Three-block ADMM driver for flip-free distortion minimization.

One iteration sweeps W -> U -> P -> Lambda: a global sparse SPD solve for
the vertex positions, a per-element proximal rotation fit, a per-element
convex SPD solve, and a dual ascent step.  This module adds everything the
bare iteration needs to run unattended: pin handling by elimination with a
cached factorization, penalty rescaling on a geometric schedule, primal/dual
termination tests with a flip-free gate, stall detection, and a CSV
diagnostics trail.

The driver is single-owner: one thread calls :meth:`AdmmSolver.iterate`.
Constraint edits from other threads go through the solver's mailbox and are
picked up at iteration boundaries only.
"""

from __future__ import annotations

import math
import threading
import time
from collections import deque
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import IO, Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .energies import EnergyKind
from .jacobian import (
    JacobianOperator,
    apply,
    apply_adjoint,
    assemble_weighted_laplacian,
    build_gradient_operator,
)
from .kernels import batch, scalar
from .local_steps import eps_floor_for
from .mesh_io import HandleConstraints, Mesh

__all__ = [
    "AdmmSolver",
    "AdmmState",
    "ConstraintMailbox",
    "ConvergenceConstants",
    "DiagnosticsRecord",
    "ExitStatus",
    "LOG_COLUMNS",
    "SolveResult",
    "SolverConfig",
    "TerminationDecision",
    "augmented_lagrangian",
    "check_termination",
    "convergence_constants",
    "lipschitz_constants",
    "penalty_floor",
    "rescale_penalties",
    "rescale_schedule",
    "solve",
    "termination_thresholds",
]

_EPS = float(np.finfo(np.float64).eps)

#: Column order of the iteration log.
LOG_COLUMNS = (
    "iter",
    "e_prim",
    "e_dual",
    "energy",
    "flips",
    "phi",
    "max_grad_norm",
    "lambda_ratio",
    "mu_min",
    "mu_max",
    "wall_ms",
)

TERMINATION_MODES = ("default", "flip-free-only", "target-energy")


class ExitStatus(str, Enum):
    CONVERGED = "converged"
    MAX_ITER = "max-iter"
    STALLED = "stalled"

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return self.value


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the ADMM driver.

    The defaults are the general-purpose tolerances; :meth:`deformation`
    builds the much tighter preset used for handle-based deformation.
    """

    energy: EnergyKind = EnergyKind.SYMMETRIC_GRADIENT
    eps_abs: float = 1e-6
    eps_rel: float = 1e-5
    max_iter: int = 100_000
    rho: float = 5.0
    gamma: float = 1.0
    eps_slack: float = 0.0
    proximal: bool = True
    termination: str = "default"
    target_energy: Optional[float] = None
    rescale: bool = True
    rescale_base: float = 5.0
    rescale_growth: float = 1.5
    log_path: Optional[Union[str, Path]] = None

    def __post_init__(self):
        object.__setattr__(self, "energy", EnergyKind(self.energy))
        if not self.energy.solvable:
            raise ValueError(f"{self.energy.name} cannot be minimized by this solver")
        if self.termination not in TERMINATION_MODES:
            raise ValueError(
                f"termination must be one of {TERMINATION_MODES}, got {self.termination!r}"
            )
        if self.termination == "target-energy" and self.target_energy is None:
            raise ValueError("target-energy termination requires target_energy")
        for name in ("eps_abs", "eps_rel", "rho", "gamma", "rescale_base", "rescale_growth"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.eps_slack < 0.0:
            raise ValueError("eps_slack must be nonnegative")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")

    @classmethod
    def deformation(cls, **kw) -> "SolverConfig":
        """Tight-tolerance preset for handle deformation."""
        kw.setdefault("energy", EnergyKind.SYMMETRIC_DIRICHLET)
        kw.setdefault("eps_abs", 5e-10)
        kw.setdefault("eps_rel", 5e-9)
        return cls(**kw)


@dataclass(frozen=True)
class ConvergenceConstants:
    """Per-element constants backing the penalty floor and proximal weight.

    ``B`` bounds the energy gradient at the current iterate, ``C_L``/``C_LG``
    are the derived eigenvalue lower bounds, ``F`` the local Lipschitz
    constant of the gradient (capped), ``mu_min`` the penalty floor and ``h``
    the proximal weight.
    """

    B: np.ndarray
    C_L: np.ndarray
    C_LG: np.ndarray
    F: np.ndarray
    mu_min: np.ndarray
    h: np.ndarray


def lipschitz_constants(B):
    """Eigenvalue lower-bound constants for a gradient bound ``B``.

    Returns ``(C_L, C_LG)`` where ``C_L`` is the positive root of
    ``x^2 + B x - 1`` and ``C_LG`` the positive root of ``x^4 + B x^3 - 1``.
    Always ``C_L <= C_LG <= 1``.
    """
    B = np.atleast_1d(np.asarray(B, dtype=np.float64))
    if np.any(B < 0.0) or not np.all(np.isfinite(B)):
        raise ValueError("gradient bounds must be finite and nonnegative")
    # conjugate form: exact for B = 0 and stable for huge B
    c_l = 2.0 / (B + np.sqrt(4.0 + B * B))
    c_lg = np.array(
        [scalar.quartic_unique_positive(1.0, float(b), -1.0) for b in B]
    )
    if np.any(c_l > c_lg * (1.0 + 1e-12)) or np.any(c_lg > 1.0 + 1e-12):
        raise AssertionError("constant ordering C_L <= C_LG <= 1 violated")
    return c_l, c_lg


def penalty_floor(weights, F, gamma: float = 1.0, eps_slack: float = 0.0):
    """Smallest penalty for which the sweep is provably decreasing.

    The positive root of ``mu**2 + (w - 2*eps)*mu - 4*gamma*w**2*F**2``.
    """
    w = np.asarray(weights, dtype=np.float64)
    F = np.asarray(F, dtype=np.float64)
    a = w - 2.0 * eps_slack
    return 0.5 * (-a + np.sqrt(a * a + 16.0 * gamma * (w * F) ** 2))


def convergence_constants(
    kind: EnergyKind,
    grad_norms,
    weights,
    mu,
    *,
    d: int,
    gamma: float = 1.0,
    eps_slack: float = 0.0,
) -> ConvergenceConstants:
    """Build all per-element constants from observed gradient norms.

    ``F**2`` is capped at ``eps_machine**-0.25`` so the penalty floor stays
    representable even when a gradient blows up on a nearly collapsed
    element.
    """
    kind = EnergyKind(kind)
    g = np.asarray(grad_norms, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    B = np.sqrt(5.0 * (1.0 + g * g))
    c_l, c_lg = lipschitz_constants(B)
    rd = math.sqrt(d)
    if kind is EnergyKind.SYMMETRIC_GRADIENT:
        F = 1.0 + rd / (c_l * c_l)
    elif kind is EnergyKind.SYMMETRIC_DIRICHLET:
        F = 1.0 + 3.0 * rd / (c_lg**4)
    else:  # pragma: no cover - config rejects it earlier
        raise ValueError(f"no convergence constants for {kind.name}")
    F = np.minimum(F, _EPS**-0.125)
    mu_min = penalty_floor(w, F, gamma, eps_slack)
    h = 4.0 * gamma * w * w * B * B / mu + 2.0 * eps_slack
    return ConvergenceConstants(B=B, C_L=c_l, C_LG=c_lg, F=F, mu_min=mu_min, h=h)


@dataclass(frozen=True)
class DiagnosticsRecord:
    """One iteration's log row (totals, per-element maxima, and proxies)."""

    iter: int
    e_prim: float
    e_dual: float
    e_prim_max: float
    e_dual_max: float
    energy: float
    flips: int
    phi: float
    max_grad_norm: float
    lambda_ratio: float
    mu_min: float
    mu_max: float
    wall_ms: float

    def csv_row(self) -> str:
        vals = [getattr(self, name) for name in LOG_COLUMNS]
        return ",".join(
            str(v) if isinstance(v, int) else repr(float(v)) for v in vals
        )


@dataclass(frozen=True)
class TerminationDecision:
    stop: bool
    prim_ok: bool
    dual_ok: bool
    flip_free: bool
    prim_threshold: float
    dual_threshold: float


@dataclass
class AdmmState:
    """Mutable iterate bundle of the driver.

    ``lam`` holds the *scaled* multipliers (the penalty-scaled convention).
    ``j`` caches the element Jacobians of the current ``w`` so consecutive
    iterations can form the dual error without re-applying the operator.
    """

    w: np.ndarray  # (n, d) target vertex positions
    u: np.ndarray  # (m, d, d) rotations
    p: np.ndarray  # (m, d, d) SPD factors
    lam: np.ndarray  # (m, d, d) scaled multipliers
    mu: np.ndarray  # (m,) penalties
    h: np.ndarray  # (m,) proximal weights
    j: np.ndarray  # (m, d, d) cached (G w)
    k: int = 0
    rescale_events: int = 0
    k_last_rescale: int = 0
    constants: Optional[ConvergenceConstants] = None
    factorization: Optional["_Factorization"] = None

    def positions(self) -> np.ndarray:
        """Immutable snapshot of the current vertex positions."""
        out = self.w.copy()
        out.setflags(write=False)
        return out


@dataclass(frozen=True)
class SolveResult:
    w: np.ndarray
    status: ExitStatus
    history: tuple
    state: AdmmState
    decision: Optional[TerminationDecision]

    @property
    def iterations(self) -> int:
        return self.state.k

    @property
    def final(self) -> Optional[DiagnosticsRecord]:
        return self.history[-1] if self.history else None


class ConstraintMailbox:
    """Single-slot, latest-wins handoff of constraint edits between threads."""

    def __init__(self):
        self._lock = threading.Lock()
        self._slot = None

    def post(self, constraints: HandleConstraints, token=None) -> None:
        with self._lock:
            self._slot = (constraints, token)

    def take(self):
        with self._lock:
            slot = self._slot
            self._slot = None
        return slot


def rescale_schedule(
    k: int, p: int, k_last: int = 0, base: float = 5.0, growth: float = 1.5
) -> bool:
    """Whether a rescale event is due at iteration ``k``.

    Fires on each of the first ``base`` iterations, then whenever the gap
    since the last event reaches ``base * growth**p`` (``p`` = events so
    far).
    """
    if k < 1:
        raise ValueError("schedule is defined for k >= 1")
    if k <= int(base):
        return True
    return (k - k_last) >= base * growth**p


def rescale_penalties(mu, lam, e_prim_i, e_dual_i, rho, mu_min):
    """Apply the per-element penalty update rule.

    Elements whose primal error dominates by more than ``rho`` get their
    penalty multiplied by ``rho/2``; the converse divides.  Penalties are
    clamped from below at ``mu_min/2``, and the multipliers are rescaled by
    the exact ratio actually applied so the unscaled multiplier ``mu*lam``
    is preserved.

    Returns ``(mu', lam', changed)`` where ``changed`` marks elements whose
    penalty moved.
    """
    mu = np.asarray(mu, dtype=np.float64)
    factor = 0.5 * rho
    new_mu = np.where(e_prim_i > rho * e_dual_i, mu * factor, mu)
    new_mu = np.where(e_dual_i > rho * e_prim_i, mu / factor, new_mu)
    new_mu = np.maximum(new_mu, 0.5 * np.asarray(mu_min, dtype=np.float64))
    changed = new_mu != mu
    new_lam = lam * (mu / new_mu)[:, None, None]
    return new_mu, new_lam, changed


def augmented_lagrangian(state: AdmmState, weights, kind: EnergyKind) -> float:
    """The merit function the sweep monotonically decreases (in test mode)."""
    kind = EnergyKind(kind)
    f_vals = batch.f_spd(int(kind), state.p)
    gap = state.j - state.u @ state.p + state.lam
    quad = np.einsum("mij,mij->m", gap, gap) - np.einsum(
        "mij,mij->m", state.lam, state.lam
    )
    return float(np.sum(weights * f_vals) + 0.5 * np.sum(state.mu * quad))


def termination_thresholds(state: AdmmState, config: SolverConfig, op: JacobianOperator):
    """Primal/dual thresholds: ``eps_abs*sqrt(d m) + eps_rel * scale``."""
    m = state.p.shape[0]
    base = config.eps_abs * math.sqrt(op.d * m)
    prim_scale = max(float(np.linalg.norm(state.j)), float(np.linalg.norm(state.p)))
    dual_scale = float(np.linalg.norm(apply_adjoint(op, state.lam)))
    return base + config.eps_rel * prim_scale, base + config.eps_rel * dual_scale


def check_termination(
    record: DiagnosticsRecord,
    state: AdmmState,
    config: SolverConfig,
    op: JacobianOperator,
) -> TerminationDecision:
    """Evaluate the stopping rule for the iterate described by ``record``.

    The default mode requires both error thresholds *and* a flip-free
    iterate; flip-free-only stops at the first flip-free iterate; the
    target-energy mode stops once the energy reaches the target on a
    flip-free iterate.
    """
    prim_thr, dual_thr = termination_thresholds(state, config, op)
    prim_ok = record.e_prim < prim_thr
    dual_ok = record.e_dual < dual_thr
    flip_free = record.flips == 0
    if config.termination == "flip-free-only":
        stop = flip_free
    elif config.termination == "target-energy":
        stop = flip_free and record.energy <= config.target_energy
    else:
        stop = prim_ok and dual_ok and flip_free
    return TerminationDecision(
        stop=stop,
        prim_ok=prim_ok,
        dual_ok=dual_ok,
        flip_free=flip_free,
        prim_threshold=prim_thr,
        dual_threshold=dual_thr,
    )


class _Factorization:
    """Pin-eliminated factorization of the weighted Laplacian.

    Keyed by (pin id tuple, penalty version) so the w-step can detect when a
    rebuild is due.  Eliminating the pinned rows keeps the reduced system
    SPD, so a single symmetric backend covers every mode; an indefinite
    solver branch is never needed.
    """

    def __init__(self, op: JacobianOperator, mu, pin_ids: np.ndarray, key):
        self.key = key
        self.pinned = pin_ids
        n = op.n_vertices
        mask = np.ones(n, dtype=bool)
        mask[pin_ids] = False
        self.free = np.nonzero(mask)[0]
        laplacian = assemble_weighted_laplacian(op, mu).tocsr()
        self.l_fp = laplacian[self.free][:, pin_ids].tocsr()
        if self.free.size:
            self.l_ff = laplacian[self.free][:, self.free].tocsc()
            self.lu = spla.splu(self.l_ff)
        else:
            self.l_ff = None
            self.lu = None

    def solve(self, b: np.ndarray, targets: np.ndarray) -> np.ndarray:
        """Solve for the free rows given the full right-hand side ``b``."""
        w = np.empty_like(b)
        w[self.pinned] = targets
        if not self.free.size:
            return w
        rhs = b[self.free] - self.l_fp @ targets
        x = self.lu.solve(rhs)
        rhs_norm = float(np.linalg.norm(rhs))
        resid = rhs - self.l_ff @ x
        if float(np.linalg.norm(resid)) > 1e-10 * rhs_norm:
            x = x + self.lu.solve(resid)  # one refinement pass
            resid = rhs - self.l_ff @ x
            if float(np.linalg.norm(resid)) > 1e-10 * rhs_norm:
                raise ArithmeticError(
                    "linear solve residual %.3e exceeds 1e-10 of rhs norm %.3e"
                    % (float(np.linalg.norm(resid)), rhs_norm)
                )
        w[self.free] = x
        return w


class AdmmSolver:
    """Stateful driver; owns the mesh operator, constants, and iteration loop.

    Typical batch use goes through :func:`solve`.  The interactive service
    constructs one of these, calls :meth:`initialize`, and then drives
    :meth:`iterate` itself, posting constraint edits through
    :attr:`mailbox`.
    """

    def __init__(self, mesh: Mesh, config: SolverConfig, op: Optional[JacobianOperator] = None):
        self.mesh = mesh
        self.config = config
        self.op = build_gradient_operator(mesh) if op is None else op
        self.weights = np.asarray(mesh.measures, dtype=np.float64)
        self.state: Optional[AdmmState] = None
        self.history: list = []
        self.mailbox = ConstraintMailbox()
        self.acks: deque = deque()
        self.last_decision: Optional[TerminationDecision] = None
        self._pin_ids = None
        self._pin_targets = None
        self._mu_version = 0
        self._component_labels = None
        self._zeros_m = np.zeros(self.op.n_elements)
        self._last_prim_i = None
        self._last_dual_i = None
        self._wall_ms = 0.0
        self._best_prim = math.inf
        self._best_dual = math.inf
        self._k_improved = 0
        self.factorization_builds = 0

    # -- setup -----------------------------------------------------------

    def initialize(
        self, w0: np.ndarray, constraints: Optional[HandleConstraints] = None
    ) -> AdmmState:
        """Polar-decompose the initial map and size the penalties.

        ``w0`` may contain flipped elements; those are repaired to
        epsilon-scaled rotations so every element starts with a valid
        rotation/SPD split.
        """
        mesh, op, cfg = self.mesh, self.op, self.config
        w0 = np.ascontiguousarray(w0, dtype=np.float64)
        if w0.shape != (mesh.n_vertices, op.d):
            raise ValueError(
                f"w0 must have shape {(mesh.n_vertices, op.d)}, got {w0.shape}"
            )
        if not np.all(np.isfinite(w0)):
            raise ValueError("w0 contains non-finite values")
        if constraints is None:
            constraints = HandleConstraints.empty(op.d)
        constraints = constraints.with_default_pin(w0)
        self._set_pins(constraints)

        j0 = apply(op, w0)
        u0, p0 = batch.polar_init(j0, eps_floor_for(cfg.energy))
        grads = batch.grad_norms(int(cfg.energy), p0)
        consts = convergence_constants(
            cfg.energy,
            grads,
            self.weights,
            np.ones_like(self.weights),  # placeholder; h refreshed below
            d=op.d,
            gamma=cfg.gamma,
            eps_slack=cfg.eps_slack,
        )
        mu0 = np.maximum(consts.mu_min, self.weights)
        consts = replace(
            consts,
            h=4.0 * cfg.gamma * self.weights**2 * consts.B**2 / mu0
            + 2.0 * cfg.eps_slack,
        )
        self.state = AdmmState(
            w=w0.copy(),
            u=u0,
            p=p0,
            lam=np.zeros_like(j0),
            mu=mu0,
            h=consts.h.copy(),
            j=j0,
            constants=consts,
        )
        self.history = []
        self._wall_ms = 0.0
        self._best_prim = math.inf
        self._best_dual = math.inf
        self._k_improved = 0
        return self.state

    def _set_pins(self, constraints: HandleConstraints) -> None:
        constraints.validate_for(self.mesh)
        if len(constraints) == 0:
            raise ValueError("at least one pinned vertex is required")
        order = np.argsort(constraints.vertices, kind="stable")
        self._pin_ids = np.ascontiguousarray(constraints.vertices[order])
        self._pin_targets = np.ascontiguousarray(constraints.positions[order])
        self._check_components_pinned()

    def _check_components_pinned(self) -> None:
        if self._component_labels is None:
            elems = self.mesh.elements
            k = elems.shape[1]
            rows = []
            cols = []
            for a in range(k):
                for b in range(a + 1, k):
                    rows.append(elems[:, a])
                    cols.append(elems[:, b])
            r = np.concatenate(rows)
            c = np.concatenate(cols)
            adj = sp.coo_matrix(
                (np.ones(r.size), (r, c)),
                shape=(self.mesh.n_vertices, self.mesh.n_vertices),
            )
            _, self._component_labels = connected_components(adj, directed=False)
        labels = self._component_labels
        pinned_comps = set(labels[self._pin_ids].tolist())
        for comp in range(labels.max() + 1):
            if comp not in pinned_comps:
                members = np.nonzero(labels == comp)[0]
                raise ValueError(
                    f"connected component {comp} ({members.size} vertices, "
                    f"e.g. vertex {members[0]}) has no pinned vertex"
                )

    def apply_constraints(self, constraints: HandleConstraints) -> str:
        """Swap in new handle targets; returns ``"rhs-only"`` when only the
        positions moved and ``"refactorized"`` when the pin set changed."""
        if len(constraints) == 0:
            constraints = constraints.with_default_pin(self.state.w)
        old_ids = self._pin_ids
        self._set_pins(constraints)
        if old_ids is not None and np.array_equal(old_ids, self._pin_ids):
            return "rhs-only"
        self.state.factorization = None  # key no longer matches
        return "refactorized"

    def constraints(self) -> HandleConstraints:
        """Current pin set (sorted by vertex id) as handle constraints."""
        if self._pin_ids is None:
            return HandleConstraints.empty(self.op.d)
        return HandleConstraints(self._pin_ids.copy(), self._pin_targets.copy())

    def set_energy(self, kind: EnergyKind) -> None:
        """Switch the energy mid-run, refreshing constants and penalties."""
        kind = EnergyKind(kind)
        self.config = replace(self.config, energy=kind)
        st = self.state
        if st is None:
            return
        self._refresh_constants()
        floor = 0.5 * st.constants.mu_min
        if np.any(st.mu < floor):
            st.mu = np.maximum(st.mu, floor)
            self._mu_version += 1

    # -- iteration -------------------------------------------------------

    def _factorization(self) -> _Factorization:
        key = (self._pin_ids.tobytes(), self._mu_version)
        fac = self.state.factorization
        if fac is None or fac.key != key:
            fac = _Factorization(self.op, self.state.mu, self._pin_ids, key)
            self.state.factorization = fac
            self.factorization_builds += 1
        return fac

    def w_step(self) -> np.ndarray:
        """Global least-squares fit of vertex positions to the rotation field."""
        st = self.state
        r = st.mu[:, None, None] * (st.u @ st.p - st.lam)
        b = apply_adjoint(self.op, r)
        return self._factorization().solve(b, self._pin_targets)

    def iterate(self) -> DiagnosticsRecord:
        """One full W -> U -> P -> Lambda sweep plus diagnostics."""
        t0 = time.perf_counter()
        st = self.state
        cfg = self.config
        posted = self.mailbox.take()
        if posted is not None:
            constraints, token = posted
            self.acks.append((token, self.apply_constraints(constraints)))

        j_prev = st.j
        u_prev = st.u
        lam_prev = st.lam
        kind = int(cfg.energy)

        w_new = self.w_step()
        j = apply(self.op, w_new)
        h_eff = st.h if cfg.proximal else self._zeros_m
        u = batch.u_step(j, st.lam, st.p, st.u, st.mu, h_eff)
        p = batch.p_step(kind, j, st.lam, u, self.weights, st.mu)
        gap = j - u @ p
        lam = st.lam + gap

        st.w = w_new
        st.j = j
        st.u = u
        st.p = p
        st.lam = lam
        st.k += 1

        e_prim_i = np.sqrt(np.einsum("mij,mij->m", gap, gap))
        dj = j - j_prev
        e_dual_i = st.mu * np.sqrt(np.einsum("mij,mij->m", dj, dj))
        self._last_prim_i = e_prim_i
        self._last_dual_i = e_dual_i

        vals, flipped = batch.energy_density(kind, j)
        energy = float(np.sum(np.where(flipped, 0.0, self.weights * vals)))
        flips = int(np.count_nonzero(flipped))
        grad_max = float(batch.grad_norms(kind, p).max())
        phi = augmented_lagrangian(st, self.weights, cfg.energy)

        # Multiplier-ratio proxy, computed on unscaled multipliers so the
        # value stays comparable across penalty rescalings.
        y_new = st.mu[:, None, None] * lam
        y_old = st.mu[:, None, None] * lam_prev
        dy = y_new - y_old
        num = np.sqrt(np.einsum("mij,mij->m", dy, dy))
        mid = 0.5 * (
            dy
            + u @ y_new.transpose(0, 2, 1) @ u
            - u_prev @ y_old.transpose(0, 2, 1) @ u_prev
        )
        den = np.sqrt(np.einsum("mij,mij->m", mid, mid))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(den > 0.0, num / den, np.where(num > 0.0, np.inf, 0.0))
        lam_ratio = float(ratios.max()) if ratios.size else 0.0

        self._wall_ms += (time.perf_counter() - t0) * 1e3
        record = DiagnosticsRecord(
            iter=st.k,
            e_prim=float(np.linalg.norm(e_prim_i)),
            e_dual=float(np.linalg.norm(e_dual_i)),
            e_prim_max=float(e_prim_i.max()),
            e_dual_max=float(e_dual_i.max()),
            energy=energy,
            flips=flips,
            phi=phi,
            max_grad_norm=grad_max,
            lambda_ratio=lam_ratio,
            mu_min=float(st.mu.min()),
            mu_max=float(st.mu.max()),
            wall_ms=self._wall_ms,
        )
        self.history.append(record)
        return record

    # -- penalty rescaling -------------------------------------------------

    def _refresh_constants(self) -> None:
        st, cfg = self.state, self.config
        grads = batch.grad_norms(int(cfg.energy), st.p)
        st.constants = convergence_constants(
            cfg.energy,
            grads,
            self.weights,
            st.mu,
            d=self.op.d,
            gamma=cfg.gamma,
            eps_slack=cfg.eps_slack,
        )

    def rescale(self) -> bool:
        """Run one scheduled rescale event; returns True if penalties moved.

        The gradient bound (and everything derived from it) is refreshed
        here and only here, so the penalty floor stays stable between
        factorizations.
        """
        st, cfg = self.state, self.config
        if self._last_prim_i is None:
            raise RuntimeError("rescale requires at least one completed iteration")
        self._refresh_constants()
        new_mu, new_lam, changed = rescale_penalties(
            st.mu,
            st.lam,
            self._last_prim_i,
            self._last_dual_i,
            cfg.rho,
            st.constants.mu_min,
        )
        any_changed = bool(changed.any())
        st.mu = new_mu
        st.lam = new_lam
        st.h = (
            4.0 * cfg.gamma * self.weights**2 * st.constants.B**2 / new_mu
            + 2.0 * cfg.eps_slack
        )
        st.constants = replace(st.constants, h=st.h.copy())
        st.rescale_events += 1
        st.k_last_rescale = st.k
        if any_changed:
            self._mu_version += 1  # next w-step refactorizes
        return any_changed

    # -- driver ------------------------------------------------------------

    def flip_count(self) -> int:
        _, flipped = batch.energy_density(int(self.config.energy), self.state.j)
        return int(np.count_nonzero(flipped))

    def _energy_now(self) -> float:
        vals, flipped = batch.energy_density(int(self.config.energy), self.state.j)
        return float(np.sum(np.where(flipped, 0.0, self.weights * vals)))

    def _stalled(self, record: DiagnosticsRecord) -> bool:
        improved = False
        if record.e_prim < self._best_prim * (1.0 - 1e-12):
            improved = True
        if record.e_dual < self._best_dual * (1.0 - 1e-12):
            improved = True
        self._best_prim = min(self._best_prim, record.e_prim)
        self._best_dual = min(self._best_dual, record.e_dual)
        if improved:
            self._k_improved = record.iter
            return False
        return record.iter - self._k_improved >= 200 and record.flips > 0

    def run(self, log_sink: Optional[Union[str, Path, IO[str]]] = None) -> ExitStatus:
        """Iterate to termination, writing the CSV log as it goes."""
        cfg = self.config
        if self.state is None:
            raise RuntimeError("initialize() must be called before run()")
        log = _LogWriter.open(log_sink if log_sink is not None else cfg.log_path)
        status = ExitStatus.MAX_ITER
        try:
            # Kickless modes can already be satisfied by the initial map.
            if cfg.termination == "flip-free-only" and self.flip_count() == 0:
                self.last_decision = None
                return ExitStatus.CONVERGED
            if (
                cfg.termination == "target-energy"
                and self.flip_count() == 0
                and self._energy_now() <= cfg.target_energy
            ):
                self.last_decision = None
                return ExitStatus.CONVERGED
            while self.state.k < cfg.max_iter:
                record = self.iterate()
                log.write(record)
                decision = check_termination(record, self.state, cfg, self.op)
                self.last_decision = decision
                if decision.stop:
                    status = ExitStatus.CONVERGED
                    break
                if self._stalled(record):
                    status = ExitStatus.STALLED
                    break
                if cfg.rescale and rescale_schedule(
                    self.state.k,
                    self.state.rescale_events,
                    self.state.k_last_rescale,
                    cfg.rescale_base,
                    cfg.rescale_growth,
                ):
                    self.rescale()
        finally:
            log.close()
        return status


class _LogWriter:
    def __init__(self, stream, owns: bool):
        self._stream = stream
        self._owns = owns
        if stream is not None:
            stream.write(",".join(LOG_COLUMNS) + "\n")

    @classmethod
    def open(cls, sink) -> "_LogWriter":
        if sink is None:
            return cls(None, False)
        if hasattr(sink, "write"):
            return cls(sink, False)
        return cls(open(sink, "w", encoding="utf-8"), True)

    def write(self, record: DiagnosticsRecord) -> None:
        if self._stream is not None:
            self._stream.write(record.csv_row() + "\n")

    def close(self) -> None:
        if self._stream is not None:
            self._stream.flush()
            if self._owns:
                self._stream.close()


def solve(
    mesh: Mesh,
    w0: np.ndarray,
    constraints: Optional[HandleConstraints] = None,
    config: Optional[SolverConfig] = None,
    op: Optional[JacobianOperator] = None,
) -> SolveResult:
    """Minimize the configured energy starting from the map ``w0``.

    ``w0`` does not need to be flip-free.  Returns the final positions, the
    full diagnostics history, and the exit status (``converged`` implies a
    flip-free map satisfying both error thresholds).
    """
    if config is None:
        config = SolverConfig()
    solver = AdmmSolver(mesh, config, op=op)
    solver.initialize(w0, constraints)
    status = solver.run()
    return SolveResult(
        w=solver.state.positions(),
        status=status,
        history=tuple(solver.history),
        state=solver.state,
        decision=solver.last_decision,
    )
