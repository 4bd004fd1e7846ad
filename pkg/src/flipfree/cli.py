"""Batch command line: parametrize, deform, volmap, unflip, serve.

Every batch command writes three things next to its output mesh: the mesh
itself, a CSV iteration log, and a JSON run manifest recording the exact
solver configuration and outcome.  The manifest is written even when input
validation fails, so scripted pipelines always have something to inspect.

Exit codes: 0 converged, 2 iteration budget exhausted, 3 stalled on flipped
elements, 4 input validation error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from .energies import EnergyKind, conformal_init, evaluate, tutte_init
from .jacobian import build_gradient_operator
from .mesh_io import (
    HandleConstraints,
    Mesh,
    MeshError,
    handles_from_json,
    load_mesh,
    save_obj_with_uv,
)
from .solver import ExitStatus, SolveResult, SolverConfig, solve

__all__ = ["main", "build_parser", "EXIT_VALIDATION", "ENERGY_NAMES"]

ENERGY_NAMES = {
    "sg": EnergyKind.SYMMETRIC_GRADIENT,
    "sd": EnergyKind.SYMMETRIC_DIRICHLET,
}
_KIND_TO_NAME = {v: k for k, v in ENERGY_NAMES.items()}

_EXIT_BY_STATUS = {
    ExitStatus.CONVERGED: 0,
    ExitStatus.MAX_ITER: 2,
    ExitStatus.STALLED: 3,
}
EXIT_VALIDATION = 4

_DEFAULT_SUFFIX = {
    "parametrize": "_uv.obj",
    "deform": "_deformed.obj",
    "volmap": "_volmap.tet",
    "unflip": "_unflipped.obj",
}

_COMMAND_DEFAULTS = {
    "parametrize": lambda: SolverConfig(),
    "deform": lambda: SolverConfig.deformation(),
    # flipped elements are expected in the starting maps of these two modes,
    # where the proximal rotation damping mostly holds the flips in place
    "volmap": lambda: SolverConfig(proximal=False),
    "unflip": lambda: SolverConfig(termination="flip-free-only", proximal=False),
}


# ---------------------------------------------------------------------------
# manifest


def _config_snapshot(config: SolverConfig) -> dict:
    return {
        "energy": _KIND_TO_NAME[config.energy],
        "eps_abs": config.eps_abs,
        "eps_rel": config.eps_rel,
        "max_iter": config.max_iter,
        "rho": config.rho,
        "gamma": config.gamma,
        "eps_slack": config.eps_slack,
        "proximal": config.proximal,
        "termination": config.termination,
        "target_energy": config.target_energy,
        "rescale": config.rescale,
        "rescale_base": config.rescale_base,
        "rescale_growth": config.rescale_growth,
    }


def _write_manifest(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


class _Run:
    """Collects paths and outcome of one command, then writes the manifest."""

    def __init__(self, command: str, mesh_path: str, args: argparse.Namespace):
        self.command = command
        self.inputs = {"mesh": str(mesh_path)}
        if getattr(args, "handles", None) is not None:
            self.inputs["handles"] = str(args.handles)
        if getattr(args, "target_boundary", None) is not None:
            self.inputs["target_boundary"] = str(args.target_boundary)
        if args.out:
            self.out = Path(args.out)
        else:
            src = Path(mesh_path)
            self.out = src.with_name(src.stem + _DEFAULT_SUFFIX[command])
        base = self.out.with_suffix("")
        self.log = Path(args.log) if args.log else base.with_suffix(".log.csv")
        self.manifest = base.with_suffix(".manifest.json")
        self.init: Optional[str] = getattr(args, "init", None)
        self.config: Optional[SolverConfig] = None
        self.t0 = time.perf_counter()

    def _base_doc(self) -> dict:
        config = self.config if self.config is not None else _COMMAND_DEFAULTS[self.command]()
        doc = {
            "command": self.command,
            "inputs": self.inputs,
            "config": _config_snapshot(config),
            "out": str(self.out),
            "log": str(self.log),
        }
        if self.init is not None:
            doc["init"] = self.init
        return doc

    def _wall_ms(self) -> float:
        return (time.perf_counter() - self.t0) * 1000.0

    def finish(self, result: SolveResult, energy: float, flips: int) -> int:
        code = _EXIT_BY_STATUS[result.status]
        doc = self._base_doc()
        doc["status"] = result.status.value
        doc["exit_code"] = code
        doc["summary"] = {
            "energy": energy,
            "flips": flips,
            "iterations": result.iterations,
            "wall_ms": self._wall_ms(),
        }
        _write_manifest(self.manifest, doc)
        return code

    def fail(self, message: str) -> int:
        doc = self._base_doc()
        doc["status"] = "error"
        doc["exit_code"] = EXIT_VALIDATION
        doc["error"] = message
        doc["summary"] = {
            "energy": None,
            "flips": None,
            "iterations": None,
            "wall_ms": self._wall_ms(),
        }
        _write_manifest(self.manifest, doc)
        print(f"error: {message}", file=sys.stderr)
        return EXIT_VALIDATION


# ---------------------------------------------------------------------------
# shared pieces


def _solver_config(args, command: str) -> SolverConfig:
    """Resolve flags against the command's defaults."""
    kw = {}
    if args.energy is not None:
        kw["energy"] = ENERGY_NAMES[args.energy]
    if args.eps_abs is not None:
        kw["eps_abs"] = args.eps_abs
    if args.eps_rel is not None:
        kw["eps_rel"] = args.eps_rel
    if args.max_iter is not None:
        kw["max_iter"] = args.max_iter
    if args.no_rescale:
        kw["rescale"] = False
    if args.proximal is not None:
        kw["proximal"] = args.proximal == "on"
    base = _COMMAND_DEFAULTS[command]()
    return dataclasses.replace(base, **kw) if kw else base


def _with_log(config: SolverConfig, log: Path) -> SolverConfig:
    log.parent.mkdir(parents=True, exist_ok=True)
    return dataclasses.replace(config, log_path=str(log))


def _load_handles(path: str, mesh: Mesh) -> HandleConstraints:
    """Parse the handles JSON: ``[{"vertex": int, "position": [...]}, ...]``."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise MeshError(f"{path}: {exc}") from exc
    return handles_from_json(doc, mesh, where=str(path))


def _summarize(mesh: Mesh, result: SolveResult, kind: EnergyKind) -> tuple[float, int]:
    rec = result.final
    if rec is not None:
        return rec.energy, rec.flips
    # zero-iteration exits: measure the returned map directly
    report = evaluate(mesh, build_gradient_operator(mesh), result.w, kind)
    return report.total, report.flips


def _report(command: str, result: SolveResult, flips: int) -> None:
    if result.status is ExitStatus.CONVERGED:
        print(f"{command}: converged in {result.iterations} iterations, {flips} flips")
    else:
        print(
            f"{command}: {result.status.value} after {result.iterations} iterations,"
            f" {flips} flips",
            file=sys.stderr,
        )


def _save_positions(mesh: Mesh, w: np.ndarray, path: Path) -> None:
    """Write a deformed copy of the mesh (OBJ for triangles, tet file for tets)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    if mesh.d == 2:
        with open(path, "w", encoding="utf-8") as fh:
            for row in w:
                z = row[2] if w.shape[1] == 3 else 0.0
                fh.write(f"v {row[0]:.9f} {row[1]:.9f} {z:.9f}\n")
            for tri in mesh.elements:
                fh.write("f %d %d %d\n" % tuple(int(t) + 1 for t in tri))
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{mesh.n_vertices} {mesh.n_elements}\n")
            for row in w:
                fh.write(f"{row[0]:.9f} {row[1]:.9f} {row[2]:.9f}\n")
            for tet in mesh.elements:
                fh.write("%d %d %d %d\n" % tuple(int(t) + 1 for t in tet))


# ---------------------------------------------------------------------------
# commands


def cmd_parametrize(args) -> int:
    run = _Run("parametrize", args.mesh, args)
    try:
        run.config = _solver_config(args, "parametrize")
        mesh = load_mesh(args.mesh)
        if mesh.d != 2:
            raise MeshError("parametrize expects a triangle surface mesh")
        w0 = conformal_init(mesh) if args.init == "conformal" else tutte_init(mesh)
        result = solve(mesh, w0, None, _with_log(run.config, run.log))
        run.out.parent.mkdir(parents=True, exist_ok=True)
        save_obj_with_uv(mesh, result.w, str(run.out))
    except (MeshError, ValueError, OSError) as exc:
        return run.fail(str(exc))
    energy, flips = _summarize(mesh, result, run.config.energy)
    _report("parametrize", result, flips)
    return run.finish(result, energy, flips)


def cmd_deform(args) -> int:
    run = _Run("deform", args.mesh, args)
    try:
        run.config = _solver_config(args, "deform")
        mesh = load_mesh(args.mesh)
        if mesh.d_in != mesh.d_out:
            raise MeshError(
                "deform expects a planar triangle mesh or a tet mesh"
                " (3D-embedded surfaces are parametrized, not deformed)"
            )
        handles = _load_handles(args.handles, mesh)
        if len(handles) == 0:
            raise MeshError("deformation requires at least one handle")
        result = solve(
            mesh, mesh.vertices.copy(), handles, _with_log(run.config, run.log)
        )
        _save_positions(mesh, result.w, run.out)
    except (MeshError, ValueError, OSError) as exc:
        return run.fail(str(exc))
    energy, flips = _summarize(mesh, result, run.config.energy)
    _report("deform", result, flips)
    return run.finish(result, energy, flips)


def cmd_volmap(args) -> int:
    run = _Run("volmap", args.mesh, args)
    try:
        run.config = _solver_config(args, "volmap")
        mesh = load_mesh(args.mesh)
        if mesh.d != 3:
            raise MeshError("volmap expects a tet mesh")
        targets = _load_handles(args.target_boundary, mesh)
        w0 = tutte_init(mesh, targets)  # rejects partial boundary coverage
        result = solve(mesh, w0, targets, _with_log(run.config, run.log))
        _save_positions(mesh, result.w, run.out)
    except (MeshError, ValueError, OSError) as exc:
        return run.fail(str(exc))
    energy, flips = _summarize(mesh, result, run.config.energy)
    _report("volmap", result, flips)
    return run.finish(result, energy, flips)


def cmd_unflip(args) -> int:
    run = _Run("unflip", args.mesh, args)
    try:
        run.config = _solver_config(args, "unflip")
        mesh = load_mesh(args.mesh)
        if mesh.d != 2:
            raise MeshError("unflip expects a triangle surface mesh")
        if mesh.uv is None:
            raise MeshError(
                "unflip needs an input with a complete per-vertex UV channel"
            )
        result = solve(mesh, mesh.uv.copy(), None, _with_log(run.config, run.log))
        run.out.parent.mkdir(parents=True, exist_ok=True)
        save_obj_with_uv(mesh, result.w, str(run.out))
    except (MeshError, ValueError, OSError) as exc:
        return run.fail(str(exc))
    energy, flips = _summarize(mesh, result, run.config.energy)
    if result.status is ExitStatus.CONVERGED:
        print(f"unflip: flip-free after {result.iterations} iterations")
    else:
        _report("unflip", result, flips)
    return run.finish(result, energy, flips)


def cmd_serve(args) -> int:
    try:
        mesh = load_mesh(args.mesh)
        if mesh.d != 2 or mesh.d_in != 2:
            raise MeshError("serve expects a planar triangle mesh")
    except (MeshError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    from . import service

    service.serve(mesh, port=args.port)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--energy", choices=sorted(ENERGY_NAMES), default=None,
                   help="distortion energy (default depends on the command)")
    p.add_argument("--eps-abs", type=float, default=None, metavar="EPS")
    p.add_argument("--eps-rel", type=float, default=None, metavar="EPS")
    p.add_argument("--max-iter", type=int, default=None, metavar="N")
    p.add_argument("--no-rescale", action="store_true",
                   help="freeze the penalty parameters at their initial values")
    p.add_argument("--proximal", choices=("on", "off"), default=None,
                   help="rotation-step damping (default: off for volmap/unflip,"
                        " on otherwise)")
    p.add_argument("--out", default=None, metavar="PATH",
                   help="output mesh path (default: derived from the input)")
    p.add_argument("--log", default=None, metavar="PATH",
                   help="CSV iteration log path (default: next to the output)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flipfree",
        description="Flip-free mesh distortion optimisation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parametrize", help="flatten a disk surface to UVs")
    p.add_argument("mesh")
    p.add_argument("--init", choices=("tutte", "conformal"), default="tutte")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_parametrize)

    p = sub.add_parser("deform", help="deform a mesh under handle constraints")
    p.add_argument("mesh")
    p.add_argument("--handles", required=True, metavar="JSON",
                   help='constraints: [{"vertex": int, "position": [...]}, ...]')
    _add_solver_flags(p)
    p.set_defaults(func=cmd_deform)

    p = sub.add_parser("volmap", help="volume map a tet mesh onto a target boundary")
    p.add_argument("mesh")
    p.add_argument("--target-boundary", required=True, metavar="JSON",
                   help="target positions for every boundary vertex")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_volmap)

    p = sub.add_parser("unflip", help="remove flipped elements from an existing UV map")
    p.add_argument("mesh")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_unflip)

    p = sub.add_parser("serve", help="start the interactive deformation service")
    p.add_argument("--mesh", required=True)
    p.add_argument("--port", type=int, default=8787)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
