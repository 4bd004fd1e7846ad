"""Interactive deformation service: a websocket wrapped around a live solver.

One solver session per served mesh.  A worker thread drives the iteration
loop continuously; websocket clients steer it by swapping handle targets
between iterations.  The session keeps its state across client disconnects
and reconnects until a ``reset`` message arrives.  One client may be
attached at a time; additional connections are refused with an error frame.

Protocol — JSON text frames unless noted below.

Client to server::

    {"type": "set_constraints",
     "handles": [{"vertex": int, "position": [x, y]}, ...]}
        Replaces the whole handle set.  Positions-only changes take effect
        on the next iteration without rebuilding the global system
        (acknowledged as "rhs-only"); pin-set changes trigger a
        refactorization (acknowledged as "refactorized").  An empty list
        falls back to pinning one vertex in place, since the solver needs
        at least one pin.
    {"type": "pause"} / {"type": "resume"}
        Hold / continue the loop.  State is kept while paused; constraint
        edits sent while paused are applied and acknowledged immediately,
        but solving continues only on resume.
    {"type": "reset"}
        Restore the rest positions and the default pin, discarding the
        deformed state.
    {"type": "set_energy", "kind": "sg" | "sd"}
        Switch the distortion energy mid-run.

Server to client::

    {"type": "mesh", "vertices": [[x, y], ...], "faces": [[i, j, k], ...]}
        Handshake geometry (rest positions), sent once per connection and
        followed by one update carrying the session's current state and a
        status frame.
    {"type": "update", "positions": [[x, y], ...], "iter": int,
     "energy": float, "flips": int, "e_prim": float, "e_dual": float}
        One solver iterate.  ``iter`` increases monotonically for the
        lifetime of the session; a reset continues the count instead of
        restarting it.  At most one update is sent per throttle period
        (default 33 ms), except the update announcing convergence, which
        always goes out.  Updates a slow reader has not consumed yet are
        coalesced latest-wins, so the solver never blocks on the network.
    {"type": "status", "state": "running" | "paused" | "converged",
     "iter": int, "handles": [...], ["applied": "rhs-only" | "refactorized"]}
        Acknowledgement for every accepted client message — constraint
        acks carry the ``applied`` field — and a spontaneous announcement
        when the solve converges.
    {"type": "error", "message": str}
        Reply to a rejected client message; the session continues.

Ordering: server frames for one connection are delivered first-in
first-out, and a constraint acknowledgement is always queued before the
first update that reflects the new handles.

Wire format for large meshes: a ``vertices``/``positions`` array with more
than ``BINARY_THRESHOLD`` rows travels as one binary frame instead of JSON
text::

    8 bytes   little-endian uint64: byte length H of the JSON header
    H bytes   UTF-8 JSON header — the usual envelope minus the array
              field, plus {"array": <field name>, "rows": n, "cols": d}
    n*d*8     array values, IEEE-754 binary64, little-endian, row-major

Both encodings are bit-exact: the JSON path emits shortest round-trip
float literals and the binary path carries the raw 8-byte values.
"""

from __future__ import annotations

import asyncio
import contextlib
import json
import queue
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from . import __version__
from .cli import ENERGY_NAMES
from .energies import evaluate
from .mesh_io import HandleConstraints, Mesh, MeshError, handles_from_json
from .solver import AdmmSolver, SolverConfig, check_termination, rescale_schedule

__all__ = ["BINARY_THRESHOLD", "DeformSession", "create_app", "serve"]

#: Vertex-array row count above which frames switch to the binary encoding.
BINARY_THRESHOLD = 10_000


# ---------------------------------------------------------------------------
# outbound plumbing


@dataclass
class _Update:
    envelope: dict  # the JSON fields except positions
    positions: np.ndarray
    final: bool  # convergence frame: bypasses the throttle


class _ThrottleGate:
    """Spacing control for update frames.

    ``delay`` returns how long the caller must still wait before sending
    an update at ``now``; a final (convergence) update never waits.
    """

    def __init__(self, period_s: float):
        self.period_s = max(0.0, float(period_s))
        self._last: Optional[float] = None

    def delay(self, now: float, final: bool) -> float:
        if final or self._last is None:
            return 0.0
        return max(0.0, self._last + self.period_s - now)

    def mark(self, now: float) -> None:
        self._last = now


class _Sink:
    """Per-connection outbound queue.

    Frames are delivered first-in first-out.  A new update replaces an
    unsent update at the tail (latest wins), but never jumps past queued
    events, so acknowledgements keep their place in the stream.
    """

    def __init__(self, poke: Callable[[], None]):
        self._lock = threading.Lock()
        self._items: deque = deque()  # ("event", dict) | ("update", _Update)
        self._poke = poke

    def put_event(self, payload: dict) -> None:
        with self._lock:
            self._items.append(("event", payload))
        self._poke()

    def put_update(self, update: _Update) -> None:
        with self._lock:
            if self._items and self._items[-1][0] == "update":
                self._items[-1] = ("update", update)
            else:
                self._items.append(("update", update))
        self._poke()

    def take(self, now: float, gate: _ThrottleGate):
        """Pop the next frame.

        Returns ``(item, None)`` with the frame to send, ``(None, wait)``
        when the head update is throttled for ``wait`` more seconds, or
        ``(None, None)`` when the queue is empty.
        """
        with self._lock:
            if not self._items:
                return None, None
            kind, payload = self._items[0]
            if kind == "update":
                wait = gate.delay(now, payload.final)
                if wait > 0.0:
                    return None, wait
                gate.mark(now)
            self._items.popleft()
            return (kind, payload), None


# ---------------------------------------------------------------------------
# session


class DeformSession:
    """One solver plus the worker thread that drives it.

    The worker owns all solver state.  The network side communicates only
    through the solver's constraint mailbox, a command queue, and the
    immutable snapshots this class publishes.
    """

    def __init__(
        self,
        mesh: Mesh,
        config: Optional[SolverConfig] = None,
        throttle_ms: float = 33.0,
    ):
        if mesh.d != 2 or mesh.d_in != 2:
            raise MeshError("interactive deformation expects a planar triangle mesh")
        self.mesh = mesh
        self.throttle_s = max(0.0, float(throttle_ms) / 1000.0)
        self.solver = AdmmSolver(
            mesh, config if config is not None else SolverConfig.deformation()
        )
        self.solver.initialize(mesh.vertices.copy(), None)
        self._commands: queue.SimpleQueue = queue.SimpleQueue()
        self._wake = threading.Event()
        self._stop = threading.Event()
        self._paused = False
        self._converged = False
        self._iter_base = 0
        self._last_iter = 0
        self._handles_doc: list = []
        self._refresh_handles()
        self._sink_lock = threading.Lock()
        self._sink: Optional[_Sink] = None
        self.latest: _Update = self._snapshot()
        self._thread = threading.Thread(
            target=self._loop, name="deform-session", daemon=True
        )
        self._thread.start()

    # -- network-thread surface --------------------------------------------

    def attach(self, sink: _Sink) -> bool:
        """Claim the session for one connection; False if already claimed."""
        with self._sink_lock:
            if self._sink is not None:
                return False
            self._sink = sink
            return True

    def detach(self, sink: _Sink) -> None:
        with self._sink_lock:
            if self._sink is sink:
                self._sink = None

    def post_constraints(self, constraints: HandleConstraints, sink: _Sink) -> None:
        self.solver.mailbox.post(constraints, sink)
        self._wake.set()

    def post_command(self, name: str, arg, sink: _Sink) -> None:
        self._commands.put((name, arg, sink))
        self._wake.set()

    def state_name(self) -> str:
        if self._paused:
            return "paused"
        return "converged" if self._converged else "running"

    def status_doc(self, applied: Optional[str] = None) -> dict:
        doc = {
            "type": "status",
            "state": self.state_name(),
            "iter": self._last_iter,
            "handles": self._handles_doc,
        }
        if applied is not None:
            doc["applied"] = applied
        return doc

    def close(self) -> None:
        self._stop.set()
        self._wake.set()
        self._thread.join(timeout=10.0)

    # -- worker thread -------------------------------------------------------

    def _refresh_handles(self) -> None:
        cons = self.solver.constraints()
        self._handles_doc = [
            {"vertex": int(v), "position": [float(c) for c in p]}
            for v, p in zip(cons.vertices, cons.positions)
        ]

    def _snapshot(self) -> _Update:
        """Synthetic update describing the current state without iterating."""
        st = self.solver.state
        report = evaluate(self.mesh, self.solver.op, st.w, self.solver.config.energy)
        return self._payload(
            st.w,
            self._iter_base + st.k,
            report.total,
            report.flips,
            0.0,
            0.0,
            final=self._converged,
        )

    def _payload(self, positions, it, energy, flips, e_prim, e_dual, final) -> _Update:
        envelope = {
            "type": "update",
            "iter": int(it),
            "energy": float(energy),
            "flips": int(flips),
            "e_prim": float(e_prim),
            "e_dual": float(e_dual),
        }
        pos = np.ascontiguousarray(positions, dtype=np.float64).copy()
        return _Update(envelope, pos, bool(final))

    def _current_sink(self) -> Optional[_Sink]:
        with self._sink_lock:
            return self._sink

    def _send_event(self, sink: Optional[_Sink], doc: dict) -> None:
        if sink is not None:
            sink.put_event(doc)

    def _publish(self, update: _Update) -> None:
        self._last_iter = update.envelope["iter"]
        self.latest = update
        sink = self._current_sink()
        if sink is not None:
            sink.put_update(update)

    def _loop(self) -> None:
        solver = self.solver
        while not self._stop.is_set():
            self._drain_commands()
            if self._paused or self._converged:
                posted = solver.mailbox.take()
                if posted is not None:
                    constraints, sink = posted
                    applied = solver.apply_constraints(constraints)
                    self._refresh_handles()
                    self._converged = False
                    self._send_event(sink, self.status_doc(applied=applied))
                    continue
                self._wake.wait(0.05)
                self._wake.clear()
                continue
            record = solver.iterate()  # consumes mailbox posts at the boundary
            while solver.acks:
                token, applied = solver.acks.popleft()
                self._refresh_handles()
                self._send_event(token, self.status_doc(applied=applied))
            decision = check_termination(record, solver.state, solver.config, solver.op)
            final = bool(decision.stop)
            if final:
                self._converged = True
            elif solver.config.rescale and rescale_schedule(
                solver.state.k,
                solver.state.rescale_events,
                solver.state.k_last_rescale,
                solver.config.rescale_base,
                solver.config.rescale_growth,
            ):
                solver.rescale()
            self._publish(
                self._payload(
                    solver.state.w,
                    self._iter_base + record.iter,
                    record.energy,
                    record.flips,
                    record.e_prim,
                    record.e_dual,
                    final,
                )
            )
            if final:
                self._send_event(self._current_sink(), self.status_doc())

    def _drain_commands(self) -> None:
        solver = self.solver
        while True:
            try:
                name, arg, sink = self._commands.get_nowait()
            except queue.Empty:
                return
            if name == "pause":
                self._paused = True
            elif name == "resume":
                self._paused = False
            elif name == "set_energy":
                solver.set_energy(arg)
                self._converged = False
            elif name == "reset":
                solver.initialize(self.mesh.vertices.copy(), None)
                self._iter_base = self._last_iter + 1
                self._paused = False
                self._converged = False
                self._refresh_handles()
            self._send_event(sink, self.status_doc())
            if name == "reset":
                self._publish(self._snapshot())


# ---------------------------------------------------------------------------
# wire encoding


def _dumps(doc: dict) -> str:
    return json.dumps(doc, separators=(",", ":"))


def _encode_binary(envelope: dict, array_field: str, values: np.ndarray) -> bytes:
    header = dict(envelope)
    header["array"] = array_field
    header["rows"] = int(values.shape[0])
    header["cols"] = int(values.shape[1])
    head = _dumps(header).encode("utf-8")
    body = np.ascontiguousarray(values, dtype="<f8").tobytes()
    return struct.pack("<Q", len(head)) + head + body


async def _send_array_message(ws: WebSocket, envelope: dict, field: str,
                              values: np.ndarray) -> None:
    if values.shape[0] > BINARY_THRESHOLD:
        await ws.send_bytes(_encode_binary(envelope, field, values))
    else:
        doc = dict(envelope)
        doc[field] = values.tolist()
        await ws.send_text(_dumps(doc))


# ---------------------------------------------------------------------------
# connection handling


def _dispatch(session: DeformSession, sink: _Sink, text: str) -> None:
    """Parse and route one client frame (network thread; never blocks)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        sink.put_event({"type": "error", "message": f"invalid JSON: {exc}"})
        return
    if not isinstance(doc, dict) or not isinstance(doc.get("type"), str):
        sink.put_event(
            {"type": "error", "message": "expected an object with a 'type' field"}
        )
        return
    mtype = doc["type"]
    if mtype == "set_constraints":
        try:
            constraints = handles_from_json(
                doc.get("handles"), session.mesh, where="set_constraints"
            )
        except MeshError as exc:
            sink.put_event({"type": "error", "message": str(exc)})
            return
        session.post_constraints(constraints, sink)
    elif mtype in ("pause", "resume", "reset"):
        session.post_command(mtype, None, sink)
    elif mtype == "set_energy":
        kind = doc.get("kind")
        if kind not in ENERGY_NAMES:
            sink.put_event(
                {
                    "type": "error",
                    "message": f"unknown energy kind {kind!r}; expected 'sg' or 'sd'",
                }
            )
            return
        session.post_command("set_energy", ENERGY_NAMES[kind], sink)
    else:
        sink.put_event({"type": "error", "message": f"unknown message type {mtype!r}"})


async def _send_loop(ws: WebSocket, session: DeformSession, sink: _Sink,
                     ready: asyncio.Event) -> None:
    gate = _ThrottleGate(session.throttle_s)
    last_iter_sent = -1
    while True:
        item, wait = sink.take(time.monotonic(), gate)
        if item is not None:
            kind, payload = item
            if kind == "event":
                await ws.send_text(_dumps(payload))
            else:
                it = payload.envelope["iter"]
                if it > last_iter_sent or payload.final:
                    last_iter_sent = max(last_iter_sent, it)
                    await _send_array_message(
                        ws, payload.envelope, "positions", payload.positions
                    )
            continue
        if wait is not None:
            with contextlib.suppress(asyncio.TimeoutError):
                await asyncio.wait_for(ready.wait(), timeout=wait)
        else:
            await ready.wait()
        ready.clear()


async def _receive_loop(ws: WebSocket, session: DeformSession, sink: _Sink) -> None:
    while True:
        message = await ws.receive()
        if message["type"] == "websocket.disconnect":
            return
        if message.get("bytes") is not None:
            sink.put_event(
                {"type": "error", "message": "binary client frames are not supported"}
            )
            continue
        _dispatch(session, sink, message.get("text") or "")


async def _run_connection(ws: WebSocket, session: DeformSession) -> None:
    await ws.accept()
    loop = asyncio.get_running_loop()
    ready = asyncio.Event()

    def poke() -> None:
        try:
            loop.call_soon_threadsafe(ready.set)
        except RuntimeError:  # connection's loop already gone
            pass

    sink = _Sink(poke)
    if not session.attach(sink):
        await ws.send_text(
            _dumps(
                {
                    "type": "error",
                    "message": "another client is attached to this session",
                }
            )
        )
        await ws.close()
        return
    try:
        await _send_array_message(
            ws,
            {"type": "mesh", "faces": session.mesh.elements.tolist()},
            "vertices",
            session.mesh.vertices,
        )
        sink.put_update(session.latest)
        sink.put_event(session.status_doc())
        sender = asyncio.create_task(_send_loop(ws, session, sink, ready))
        try:
            await _receive_loop(ws, session, sink)
        finally:
            sender.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await sender
    except WebSocketDisconnect:
        pass
    finally:
        session.detach(sink)


# ---------------------------------------------------------------------------
# application


def create_app(
    mesh: Mesh,
    config: Optional[SolverConfig] = None,
    throttle_ms: float = 33.0,
) -> FastAPI:
    """Build the FastAPI app hosting one deformation session for ``mesh``."""
    session = DeformSession(mesh, config, throttle_ms=throttle_ms)

    @contextlib.asynccontextmanager
    async def lifespan(app: FastAPI):
        try:
            yield
        finally:
            session.close()

    app = FastAPI(lifespan=lifespan)
    app.state.session = session

    @app.get("/healthz")
    async def healthz() -> dict:
        return {"status": "ok", "version": __version__}

    @app.websocket("/session")
    async def session_socket(ws: WebSocket) -> None:
        await _run_connection(ws, session)

    return app


def serve(
    mesh: Mesh,
    port: int = 8787,
    config: Optional[SolverConfig] = None,
    host: str = "127.0.0.1",
) -> None:
    """Blocking entry point used by ``flipfree serve``."""
    import uvicorn

    uvicorn.run(create_app(mesh, config), host=host, port=port)
