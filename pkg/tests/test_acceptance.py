"""End-to-end gates for the whole toolkit, one test per gate.

Each test pins an explicit tolerance and (where stated) a wall-clock budget.
The mesh inputs are the committed files under tests/fixtures/, regenerated
deterministically by tests/fixtures/gen_fixtures.py; everything else is
seeded in place, so the suite is reproducible run to run.
"""

import json
import math
import shutil
import subprocess
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient

from flipfree.energies import (
    EnergyKind,
    evaluate,
    f_sd,
    f_sg,
    grad_f_sd,
    grad_f_sg,
    tutte_init,
)
from flipfree.jacobian import build_gradient_operator
from flipfree.kernels import batch, scalar
from flipfree.mesh_io import handles_from_json, load_mesh, mesh_from_arrays
from flipfree.service import create_app
from flipfree.solver import (
    AdmmSolver,
    ExitStatus,
    SolverConfig,
    check_termination,
    lipschitz_constants,
    rescale_penalties,
    rescale_schedule,
    solve,
    termination_thresholds,
)

FIXTURES = Path(__file__).resolve().parent / "fixtures"


@contextmanager
def budget(seconds):
    start = time.perf_counter()
    yield
    elapsed = time.perf_counter() - start
    assert elapsed < seconds, f"took {elapsed:.2f}s, budget {seconds:.0f}s"


@pytest.fixture(scope="module", autouse=True)
def _warm_kernels():
    """Pay one-off JIT/compile costs before any wall budget starts."""
    rng = np.random.default_rng(0)
    for d in (2, 3):
        j = np.eye(d) + 0.05 * rng.normal(size=(8, d, d))
        w = np.full(8, 0.5)
        u, p = batch.polar_init(j, 1e-9)
        for kind in (0, 1):
            batch.p_step(kind, j, np.zeros_like(j), u, w, w)
            batch.grad_norms(kind, p)
            batch.energy_density(kind, j)
        batch.u_step(j, np.zeros_like(j), p, u, w, w)
        scalar.procrustes(np.eye(d), np.eye(d), False)
    scalar.quartic_unique_positive(1.0, 1.0, -1.0)
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.4, 0.6]])
    tris = np.array([[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]])
    mesh = mesh_from_arrays(verts, tris)
    solve(mesh, verts, config=SolverConfig(max_iter=3))


def _random_spd(rng, d):
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    return (q * rng.uniform(0.2, 5.0, size=d)) @ q.T


def test_energy_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    h = 1e-5
    with budget(1.0):
        for d in (2, 3):
            for _ in range(50):
                p = _random_spd(rng, d)
                for f, grad in ((f_sg, grad_f_sg), (f_sd, grad_f_sd)):
                    g = grad(p)
                    fd = np.empty((d, d))
                    for i in range(d):
                        for j in range(d):
                            e = np.zeros((d, d))
                            e[i, j] = h
                            fd[i, j] = (f(p + e) - f(p - e)) / (2.0 * h)
                    assert np.linalg.norm(fd - g) <= 1e-5 * np.linalg.norm(g)


def test_p_step_returns_spd_stationary_points():
    rng = np.random.default_rng(2)
    n = 1000
    with budget(5.0):
        for kind in (0, 1):
            for d in (2, 3):
                a = rng.normal(size=(n, d, d))
                q = 0.5 * (a + a.transpose(0, 2, 1))
                w = 10.0 ** rng.uniform(-2.0, 1.0, size=n)
                mu = 10.0 ** rng.uniform(-2.0, 1.0, size=n)
                eye = np.broadcast_to(np.eye(d), (n, d, d)).copy()
                p = batch.p_step(kind, q, np.zeros_like(q), eye, w, mu)
                assert np.linalg.eigvalsh(p).min() > 0.0
                pinv = np.linalg.inv(p)
                if kind == 0:
                    g = p - pinv
                else:
                    g = p - pinv @ pinv @ pinv
                r = w[:, None, None] * g + mu[:, None, None] * (p - q)
                resid = np.linalg.norm(r, axis=(1, 2))
                bound = 1e-8 * (1.0 + mu * np.linalg.norm(q, axis=(1, 2)))
                assert np.all(resid <= bound)


def _euler_rotations(alpha, beta, gamma):
    """Z-Y-Z Euler product grid flattened to a rotation batch."""
    A, B, G = np.meshgrid(alpha, beta, gamma, indexing="ij")
    a, b, g = A.ravel(), B.ravel(), G.ravel()
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    cg, sg = np.cos(g), np.sin(g)
    rot = np.empty((a.size, 3, 3))
    rot[:, 0, 0] = ca * cb * cg - sa * sg
    rot[:, 0, 1] = -ca * cb * sg - sa * cg
    rot[:, 0, 2] = ca * sb
    rot[:, 1, 0] = sa * cb * cg + ca * sg
    rot[:, 1, 1] = -sa * cb * sg + ca * cg
    rot[:, 1, 2] = sa * sb
    rot[:, 2, 0] = -sb * cg
    rot[:, 2, 1] = sb * sg
    rot[:, 2, 2] = cb
    return rot


def _axis_angle_box(h):
    lin = np.linspace(-h, h, 9)
    ox, oy, oz = np.meshgrid(lin, lin, lin, indexing="ij")
    omega = np.stack([ox.ravel(), oy.ravel(), oz.ravel()], axis=1)
    theta = np.linalg.norm(omega, axis=1)
    rot = np.zeros((omega.shape[0], 3, 3))
    rot[:, 0, 0] = rot[:, 1, 1] = rot[:, 2, 2] = 1.0
    nz = theta > 0.0
    k = omega[nz] / theta[nz, None]
    kx = np.zeros((int(nz.sum()), 3, 3))
    kx[:, 0, 1], kx[:, 0, 2] = -k[:, 2], k[:, 1]
    kx[:, 1, 0], kx[:, 1, 2] = k[:, 2], -k[:, 0]
    kx[:, 2, 0], kx[:, 2, 1] = -k[:, 1], k[:, 0]
    s, c = np.sin(theta[nz]), np.cos(theta[nz])
    rot[nz] += s[:, None, None] * kx + (1.0 - c)[:, None, None] * (kx @ kx)
    return rot


def test_rotation_fit_matches_dense_grids():
    rng = np.random.default_rng(3)
    with budget(30.0):
        theta = np.linspace(0.0, 2.0 * math.pi, 1_000_000, endpoint=False)
        cos_t, sin_t = np.cos(theta), np.sin(theta)
        for _ in range(1000):
            q = rng.normal(size=(2, 2))
            u = scalar.procrustes(q, np.eye(2), False)
            obj = float(np.sum(u * q))
            best = float(np.max(cos_t * (q[0, 0] + q[1, 1]) + sin_t * (q[1, 0] - q[0, 1])))
            assert obj >= best - 1e-12
            assert obj - best <= 1e-9

        coarse = _euler_rotations(
            np.linspace(0.0, 2.0 * math.pi, 24, endpoint=False),
            np.linspace(0.0, math.pi, 13),
            np.linspace(0.0, 2.0 * math.pi, 24, endpoint=False),
        )
        boxes = [_axis_angle_box(0.35 * 0.6**level) for level in range(22)]
        for _ in range(100):
            q = rng.normal(size=(3, 3))
            u = scalar.procrustes(q, np.eye(3), False)
            obj = float(np.sum(u * q))
            vals = np.einsum("nij,ij->n", coarse, q)
            k = int(np.argmax(vals))
            best, center = float(vals[k]), coarse[k]
            for box in boxes:
                cand = center @ box
                vals = np.einsum("nij,ij->n", cand, q)
                k = int(np.argmax(vals))
                if vals[k] > best:
                    best, center = float(vals[k]), cand[k]
            assert obj >= best - 1e-12
            assert obj - best <= 1e-4


def test_quartic_root_matches_bisection():
    rng = np.random.default_rng(4)
    with budget(1.0):
        for _ in range(1000):
            c4 = float(rng.uniform(0.05, 10.0))
            c3 = float(rng.normal(0.0, 5.0))
            c0 = -float(rng.uniform(0.05, 10.0))
            root = scalar.quartic_unique_positive(c4, c3, c0)

            def poly(x):
                return c4 * x**4 + c3 * x**3 + c0

            lo, hi = 0.0, 1.0
            while poly(hi) <= 0.0:
                hi *= 2.0
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if poly(mid) > 0.0:
                    hi = mid
                else:
                    lo = mid
            assert abs(root - 0.5 * (lo + hi)) <= 1e-10


def test_harmonic_disk_embedding_is_flip_free():
    mesh = load_mesh(str(FIXTURES / "disk200.obj"))
    assert mesh.n_elements == 200
    with budget(1.0):
        uv = tutte_init(mesh)
        report = evaluate(mesh, build_gradient_operator(mesh), uv, EnergyKind.SYMMETRIC_GRADIENT)
    assert report.flips == 0


def test_pinned_grid_recovers_rest_pose():
    mesh = load_mesh(str(FIXTURES / "grid20.obj"))
    start = load_mesh(str(FIXTURES / "grid20_perturbed.obj"))
    rest = mesh.vertices
    rim = (rest[:, 0] == 0.0) | (rest[:, 0] == 1.0) | (rest[:, 1] == 0.0) | (rest[:, 1] == 1.0)
    pins = handles_from_json(
        [
            {"vertex": int(i), "position": [float(rest[i, 0]), float(rest[i, 1])]}
            for i in np.where(rim)[0]
        ],
        mesh,
    )
    with budget(60.0):
        result = solve(mesh, start.vertices, pins, SolverConfig.deformation())
    assert result.status is ExitStatus.CONVERGED
    assert result.final.flips == 0
    deviation = float(np.linalg.norm(result.w - rest, axis=1).max())
    assert deviation <= 1e-3 * math.sqrt(2.0)  # bbox diagonal of the unit grid


def test_hemisphere_parametrization_converges(tmp_path):
    mesh = load_mesh(str(FIXTURES / "hemisphere.obj"))
    config = SolverConfig(eps_abs=1e-6, eps_rel=1e-5)
    log = tmp_path / "run.log.csv"
    with budget(30.0):
        solver = AdmmSolver(mesh, config)
        solver.initialize(tutte_init(mesh))
        status = solver.run(log_sink=str(log))
    assert status is ExitStatus.CONVERGED
    header, *rows = log.read_text().strip().splitlines()
    final = dict(zip(header.split(","), rows[-1].split(",")))
    assert int(final["flips"]) == 0
    prim_threshold, dual_threshold = termination_thresholds(solver.state, config, solver.op)
    assert float(final["e_prim"]) < prim_threshold
    assert float(final["e_dual"]) < dual_threshold


def test_merit_non_increasing_under_fixed_penalties():
    mesh = load_mesh(str(FIXTURES / "hemisphere.obj"))
    with budget(60.0):
        config = SolverConfig(
            rescale=False,
            gamma=1.0,
            eps_slack=0.01 * float(mesh.measures.min()),
            max_iter=200,
        )
        solver = AdmmSolver(mesh, config)
        solver.initialize(tutte_init(mesh))
        bound = solver.state.constants.B
        kind = int(config.energy)
        within, phis = [], []
        for _ in range(200):
            record = solver.iterate()
            grads = batch.grad_norms(kind, solver.state.p)
            within.append(bool(np.all(grads <= bound * (1.0 + 1e-12))))
            phis.append(record.phi)
    qualifying = violations = 0
    for k in range(1, 200):
        if within[k - 1] and within[k]:
            qualifying += 1
            if phis[k] > phis[k - 1] + 1e-10 * abs(phis[k - 1]):
                violations += 1
    assert qualifying >= 190  # at least 95% of the 200 iterations
    assert violations == 0


def test_multiplier_update_equals_constraint_gap():
    mesh = load_mesh(str(FIXTURES / "hemisphere.obj"))
    config = SolverConfig(eps_abs=1e-6, eps_rel=1e-5)
    solver = AdmmSolver(mesh, config)
    solver.initialize(tutte_init(mesh))
    state = solver.state
    while True:
        lam_before = state.lam.copy()
        record = solver.iterate()
        gap = state.j - state.u @ state.p
        drift = np.linalg.norm(state.lam - lam_before - gap)
        scale = max(np.linalg.norm(state.lam - lam_before), np.linalg.norm(gap))
        assert drift <= 1e-12 * scale
        decision = check_termination(record, state, config, solver.op)
        if decision.stop:
            break
        if rescale_schedule(
            state.k,
            state.rescale_events,
            state.k_last_rescale,
            config.rescale_base,
            config.rescale_growth,
        ):
            solver.rescale()
        assert state.k < 10_000
    assert record.flips == 0


def test_reflected_patch_unfolds_within_iteration_budget():
    mesh = load_mesh(str(FIXTURES / "hemisphere_folded.obj"))
    op = build_gradient_operator(mesh)
    start_flips = evaluate(mesh, op, mesh.uv, EnergyKind.SYMMETRIC_GRADIENT).flips
    assert start_flips >= 45  # the committed UV channel starts reflected
    config = SolverConfig(termination="flip-free-only", proximal=False, max_iter=10_000)
    with budget(60.0):
        result = solve(mesh, mesh.uv, config=config, op=op)
    assert result.status is ExitStatus.CONVERGED
    assert result.iterations <= 10_000
    assert result.final.flips == 0


def test_twisted_cube_volume_map_is_injective():
    mesh = load_mesh(str(FIXTURES / "cube5.tet"))
    entries = json.loads((FIXTURES / "twist30.json").read_text())
    handles = handles_from_json(entries, mesh)
    with budget(120.0):
        w0 = tutte_init(mesh, handles)
        result = solve(mesh, w0, handles, SolverConfig(proximal=False))
    assert result.status is ExitStatus.CONVERGED
    assert result.final.flips == 0


def test_bound_constants_solve_their_polynomials():
    with budget(1.0):
        b = np.linspace(0.0, 10.0, 100)
        c_l, c_lg = lipschitz_constants(b)
        assert np.all(np.abs(c_l**2 + b * c_l - 1.0) <= 1e-12)
        assert np.all(np.abs(c_lg**4 + b * c_lg**3 - 1.0) <= 1e-12)
        assert np.all(c_l <= c_lg)
        assert np.all(c_lg <= 1.0)


def test_penalty_rescale_rule_and_schedule():
    mu = np.ones(4)
    lam = np.full((4, 2, 2), 2.0)
    e_prim = np.array([10.0, 1.0, 2.0, 1.0])
    e_dual = np.array([1.0, 10.0, 1.0, 10.0])
    mu_min = np.array([0.0, 0.0, 0.0, 1.6])
    new_mu, new_lam, changed = rescale_penalties(mu, lam, e_prim, e_dual, 5.0, mu_min)
    # dominant primal multiplies by rho/2, dominant dual divides, balanced
    # errors stay put, and the divided penalty is clamped at half its floor
    assert new_mu.tolist() == [2.5, 0.4, 1.0, 0.8]
    assert np.all(new_lam[0] == 2.0 / 2.5)
    assert np.all(new_lam[1] == 2.0 * 2.5)
    assert np.all(new_lam[2] == 2.0)
    assert np.all(new_lam[3] == 2.0 * 1.25)
    assert changed.tolist() == [True, True, False, True]

    fired, events, last = [], 0, 0
    for k in range(1, 301):
        if rescale_schedule(k, events, last):
            fired.append(k)
            events += 1
            last = k
    expect = [1, 2, 3, 4, 5]
    while True:
        gap = math.ceil(5.0 * 1.5 ** len(expect))
        if expect[-1] + gap > 300:
            break
        expect.append(expect[-1] + gap)
    assert fired == expect


def _ack(ws):
    """Next status frame carrying an ``applied`` field (skipping updates)."""
    for _ in range(20_000):
        doc = ws.receive_json()
        if doc["type"] == "status" and "applied" in doc:
            return doc
        assert doc["type"] in ("update", "status")
    raise AssertionError("no ack arrived")


def test_scripted_websocket_drag_session():
    mesh = load_mesh(str(FIXTURES / "bar.obj"))
    rest = mesh.vertices
    left = np.where(rest[:, 0] == 0.0)[0]
    right = np.where(rest[:, 0] == 4.0)[0]
    span = rest.max(axis=0) - rest.min(axis=0)
    dx = 0.2 * math.hypot(float(span[0]), float(span[1]))
    eps_abs = SolverConfig.deformation().eps_abs

    def pin(ids, shift=0.0):
        return [
            {"vertex": int(i), "position": [float(rest[i, 0]) + shift, float(rest[i, 1])]}
            for i in ids
        ]

    with TestClient(create_app(mesh, throttle_ms=0.0)) as client:
        with client.websocket_connect("/session") as ws:
            assert ws.receive_json()["type"] == "mesh"
            assert ws.receive_json()["type"] == "update"
            assert ws.receive_json()["type"] == "status"

            handles = pin(left) + pin(right)
            ws.send_text(json.dumps({"type": "set_constraints", "handles": handles}))
            assert _ack(ws)["applied"] == "refactorized"

            dragged = pin(left) + pin(right, shift=dx)
            ws.send_text(json.dumps({"type": "set_constraints", "handles": dragged}))
            assert _ack(ws)["applied"] == "rhs-only"

            updates = []
            for _ in range(20_000):
                doc = ws.receive_json()
                if doc["type"] == "update":
                    updates.append(doc)
                elif doc["type"] == "status" and doc["state"] == "converged":
                    break
            else:
                raise AssertionError("no convergence notification")

    assert len(updates) >= 1
    final = updates[-1]
    assert final["flips"] == 0
    positions = np.asarray(final["positions"])
    targets = rest[right] + [dx, 0.0]
    assert np.allclose(positions[right], targets, rtol=0.0, atol=eps_abs)


def test_browser_replay_agrees_with_server_flip_counts():
    """The UI's recorded-session replay: client orientation recount matches
    the server's flip count on every rendered frame (runs the frontend's own
    test against the committed recording)."""
    frontend = Path(__file__).resolve().parents[1] / "frontend"
    if shutil.which("npx") is None:
        pytest.skip("npx not on PATH")
    if not (frontend / "node_modules").is_dir():
        pytest.skip("frontend dependencies not installed (cd frontend && npm install)")
    proc = subprocess.run(
        ["npx", "vitest", "run", "tests/replay.test.ts"],
        cwd=frontend,
        capture_output=True,
        text=True,
        timeout=300,
    )
    assert proc.returncode == 0, proc.stdout + proc.stderr
