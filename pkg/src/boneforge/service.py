"""Session server for live rig manipulation over HTTP and WebSocket.

Scenes are subdirectories of a root folder, each holding ``rig.json``
plus ``mesh.obj`` (the layout the command line tools emit). Endpoints:

- ``GET /rigs`` lists scenes.
- ``POST /sessions {rig_id}`` opens a session (rig at canonical pose,
  mesh skinned once).
- ``GET /sessions/{id}/state`` returns the bone tree with depths,
  scales, and current pose locals.
- ``GET /sessions/{id}/mesh?pose=current`` returns the deformed mesh;
  binary by default (little-endian: u32 vertex count, f32 xyz triples,
  u32 triangle count, u32 index triples), JSON via ``?format=json``.
- ``WS /sessions/{id}/ws`` speaks the edit protocol: client messages
  ``set_bone_local``, ``add_children``, ``delete_subtree``,
  ``retarget_start``, ``undo``, ``redo``; server messages
  ``state_delta``, ``mesh_update``, ``retarget_progress``,
  ``retarget_done``, ``error``. Every JSON message carries ``v``.

A retarget runs in a worker thread and streams progress while the
receive loop keeps reading; until it finishes every other mutation is
answered with a ``busy`` error instead of interleaving. Undo snapshots
are immutable (rig, pose, binding) triples, capped at a configured
depth; a round trip restores the exact objects. The deformed mesh is
always the library warp of the canonical binding under the current
pose; nothing is computed a second way.
"""

from __future__ import annotations

import argparse
import asyncio
import itertools
import json
import logging
import os
import re
import struct
from collections import deque
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import Response
from pydantic import BaseModel

from boneforge.geometry import TriMesh, load_mesh
from boneforge.optimizer import OptimConfig, child_inits_for, retarget
from boneforge.rig import (
    Pose,
    Rig,
    RigError,
    RigidTransform,
    add_child_bones,
    canonical_pose,
    delete_subtree,
    extend_pose,
    leaf_bones,
    load_rig,
    restrict_pose,
)
from boneforge.skinning import SkinnedSurface, pose_surface, skin_surface

log = logging.getLogger(__name__)

SCHEMA_V = 1
MAX_UNDO_DEFAULT = 256
MAX_RETARGET_STEPS = 10_000

_TARGET_FILE = re.compile(r"^[\w.-]+\.obj$")


# ---------------------------------------------------------------------------
# Scene discovery and sessions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SceneEntry:
    rig_id: str
    rig_path: str
    mesh_path: str
    directory: str
    bones: int
    poses: int


def discover_scenes(root) -> dict[str, SceneEntry]:
    """Each subdirectory with rig.json + mesh.obj becomes a servable rig."""
    root = os.path.abspath(root)
    if not os.path.isdir(root):
        raise NotADirectoryError(f"scene root {root!r} is not a directory")
    scenes = {}
    for name in sorted(os.listdir(root)):
        directory = os.path.join(root, name)
        rig_path = os.path.join(directory, "rig.json")
        mesh_path = os.path.join(directory, "mesh.obj")
        if not (os.path.isfile(rig_path) and os.path.isfile(mesh_path)):
            continue
        rig, poses = load_rig(rig_path)
        scenes[name] = SceneEntry(name, rig_path, mesh_path, directory,
                                  len(rig.bones), len(poses))
    return scenes


class Session:
    """One rig being edited; snapshots are immutable (Rig, Pose, binding)."""

    def __init__(self, sid: str, rig_id: str, rig: Rig, mesh: TriMesh,
                 max_undo: int):
        self.id = sid
        self.rig_id = rig_id
        self.mesh = mesh
        self.rig = rig
        self.pose = canonical_pose(rig)
        self.skinned = skin_surface(mesh, rig, self.pose)
        self.undo_stack: deque = deque(maxlen=max_undo)
        self.redo_stack: deque = deque(maxlen=max_undo)
        self.dirty = False
        self.busy = False

    def snapshot(self) -> tuple[Rig, Pose, SkinnedSurface]:
        return (self.rig, self.pose, self.skinned)

    def push_undo(self) -> None:
        self.undo_stack.append(self.snapshot())
        self.redo_stack.clear()

    def restore(self, snap: tuple[Rig, Pose, SkinnedSurface]) -> None:
        self.rig, self.pose, self.skinned = snap

    def warped_vertices(self, pose: Pose | None = None) -> np.ndarray:
        return pose_surface(self.skinned, self.rig, canonical_pose(self.rig),
                            pose if pose is not None else self.pose)


# ---------------------------------------------------------------------------
# Wire encodings
# ---------------------------------------------------------------------------


def vertex_frame(vertices: np.ndarray) -> bytes:
    """u32 count, then count little-endian f32 xyz triples."""
    v = np.ascontiguousarray(vertices, dtype="<f4")
    return struct.pack("<I", len(v)) + v.tobytes()


def mesh_blob(vertices: np.ndarray, triangles) -> bytes:
    tri = np.ascontiguousarray(triangles, dtype="<u4")
    return vertex_frame(vertices) + struct.pack("<I", len(tri)) + tri.tobytes()


def parse_vertex_frame(blob: bytes) -> np.ndarray:
    (count,) = struct.unpack_from("<I", blob, 0)
    v = np.frombuffer(blob, dtype="<f4", count=count * 3, offset=4)
    return v.reshape(count, 3)


def parse_mesh_blob(blob: bytes) -> tuple[np.ndarray, np.ndarray]:
    verts = parse_vertex_frame(blob)
    offset = 4 + verts.nbytes
    (t,) = struct.unpack_from("<I", blob, offset)
    tri = np.frombuffer(blob, dtype="<u4", count=t * 3, offset=offset + 4)
    return verts, tri.reshape(t, 3)


def bone_entry(rig: Rig, pose: Pose, bone_id: str) -> dict:
    b = rig.bones[bone_id]
    lt = pose.local(bone_id)
    return {
        "id": bone_id,
        "parent": b.parent,
        "children": list(b.children),
        "depth": rig.depth_of[bone_id],
        "scale": b.scale.tolist(),
        "local": {
            "rotation": lt.rotation.tolist(),
            "translation": lt.translation.tolist(),
        },
    }


def state_body(session: Session) -> dict:
    rig = session.rig
    return {
        "v": SCHEMA_V,
        "session_id": session.id,
        "rig_id": session.rig_id,
        "pose_frame": session.pose.frame,
        "bones": [bone_entry(rig, session.pose, b) for b in rig.bone_order()],
        "roots": list(rig.roots),
        "leaf_ids": list(leaf_bones(rig)),
        "max_depth": rig.max_depth,
        "undo_depth": len(session.undo_stack),
        "redo_depth": len(session.redo_stack),
        "busy": session.busy,
        "dirty": session.dirty,
    }


def _entries(session: Session) -> dict[str, dict]:
    return {b: bone_entry(session.rig, session.pose, b)
            for b in session.rig.bone_order()}


def state_delta(session: Session, before: dict[str, dict]) -> dict:
    """Changed-bone diff against ``before`` (id -> bone_entry)."""
    after = _entries(session)
    changed = [e for bid, e in after.items() if before.get(bid) != e]
    removed = sorted(set(before) - set(after))
    return {
        "v": SCHEMA_V,
        "type": "state_delta",
        "changed": changed,
        "removed": removed,
        "pose_frame": session.pose.frame,
        "undo_depth": len(session.undo_stack),
        "redo_depth": len(session.redo_stack),
        "busy": session.busy,
        "dirty": session.dirty,
    }


# ---------------------------------------------------------------------------
# Application
# ---------------------------------------------------------------------------


class CreateSessionBody(BaseModel):
    rig_id: str


def create_app(scene_root, max_undo: int = MAX_UNDO_DEFAULT,
               cors_origins=("*",)) -> FastAPI:
    app = FastAPI(title="boneforge service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )
    scenes = discover_scenes(scene_root)
    sessions: dict[str, Session] = {}
    counter = itertools.count(1)

    def get_session(sid: str) -> Session:
        s = sessions.get(sid)
        if s is None:
            raise HTTPException(404, f"unknown session {sid!r}")
        return s

    @app.get("/rigs")
    def rigs() -> dict:
        return {
            "v": SCHEMA_V,
            "rigs": [
                {"id": e.rig_id, "bones": e.bones, "poses": e.poses}
                for e in scenes.values()
            ],
        }

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody) -> dict:
        entry = scenes.get(body.rig_id)
        if entry is None:
            raise HTTPException(404, f"unknown rig {body.rig_id!r}")
        rig, _ = load_rig(entry.rig_path)
        mesh = load_mesh(entry.mesh_path)
        sid = f"s{next(counter)}"
        sessions[sid] = Session(sid, body.rig_id, rig, mesh, max_undo)
        return {
            "v": SCHEMA_V,
            "session_id": sid,
            "rig_id": body.rig_id,
            "bones": len(rig.bones),
            "vertices": len(mesh.vertices),
        }

    @app.get("/sessions/{sid}/state")
    def state(sid: str) -> dict:
        return state_body(get_session(sid))

    @app.get("/sessions/{sid}/mesh")
    def mesh(sid: str, pose: str = "current", format: str = "binary"):
        s = get_session(sid)
        if pose == "current":
            p = s.pose
        elif pose == "canonical":
            p = canonical_pose(s.rig)
        else:
            raise HTTPException(
                422, f"invalid pose {pose!r}; expected 'current' or 'canonical'"
            )
        if format not in ("binary", "json"):
            raise HTTPException(
                422, f"invalid format {format!r}; expected 'binary' or 'json'"
            )
        verts = s.warped_vertices(p)
        tri = np.asarray(s.mesh.triangles)
        if format == "json":
            return {
                "v": SCHEMA_V,
                "vertices": verts.tolist(),
                "triangles": tri.tolist(),
            }
        return Response(
            content=mesh_blob(verts, tri),
            media_type="application/octet-stream",
            headers={"X-Boneforge-Schema": str(SCHEMA_V)},
        )

    # -- websocket protocol -------------------------------------------------

    @app.websocket("/sessions/{sid}/ws")
    async def ws(websocket: WebSocket, sid: str):
        fmt = websocket.query_params.get("format", "binary")
        await websocket.accept()
        send_lock = asyncio.Lock()

        async def send_json(obj: dict) -> None:
            async with send_lock:
                await websocket.send_text(json.dumps(obj))

        async def send_error(code: str, message: str) -> None:
            await send_json({"v": SCHEMA_V, "type": "error", "code": code,
                             "message": message})

        session = sessions.get(sid)
        if session is None:
            await send_error("unknown_session", f"unknown session {sid!r}")
            await websocket.close(code=4404)
            return

        async def send_mesh() -> None:
            verts = session.warped_vertices()
            if fmt == "json":
                await send_json({
                    "v": SCHEMA_V, "type": "mesh_update", "encoding": "json",
                    "vertices": verts.tolist(),
                })
                return
            envelope = json.dumps({
                "v": SCHEMA_V, "type": "mesh_update", "encoding": "binary",
                "count": len(verts),
            })
            async with send_lock:
                await websocket.send_text(envelope)
                await websocket.send_bytes(vertex_frame(verts))

        async def finish_mutation(before: dict) -> None:
            session.dirty = True
            await send_json(state_delta(session, before))
            await send_mesh()

        async def do_set_bone_local(msg: dict) -> None:
            bid = msg.get("bone_id")
            if bid not in session.rig.bones:
                await send_error("unknown_bone", f"no bone {bid!r}")
                return
            try:
                rt = RigidTransform(
                    np.asarray(msg["rotation"], dtype=np.float64),
                    np.asarray(msg["translation"], dtype=np.float64),
                )
            except (RigError, KeyError, TypeError, ValueError) as exc:
                await send_error("invalid_pose", str(exc))
                return
            before = _entries(session)
            session.push_undo()
            session.pose = session.pose.with_local(bid, rt)
            await finish_mutation(before)

        async def do_add_children(msg: dict) -> None:
            pid = msg.get("parent_id")
            if pid not in session.rig.bones:
                await send_error("unknown_bone", f"no bone {pid!r}")
                return
            try:
                k = int(msg["k"])
            except (KeyError, TypeError, ValueError):
                await send_error("bad_message", "add_children needs integer k")
                return
            if k < 1:
                await send_error("bad_message", "k must be >= 1")
                return
            leaves = leaf_bones(session.rig)
            if pid not in leaves:
                await send_error(
                    "not_a_leaf",
                    f"bone {pid!r} is internal; only leaves subdivide",
                )
                return
            inits = child_inits_for(
                session.skinned, leaves.index(pid), k,
                seed=session.rig.id_seq,
                parent_scale=session.rig.bones[pid].scale,
            )
            if inits is None:
                await send_error(
                    "too_few_vertices",
                    f"surface has fewer than {k} vertices to cluster",
                )
                return
            before = _entries(session)
            session.push_undo()
            new_rig = add_child_bones(session.rig, pid, inits)
            fresh = {b: new_rig.bones[b].local for b in new_rig.bones
                     if b not in session.rig.bones}
            session.pose = extend_pose(session.pose, fresh)
            session.rig = new_rig
            session.skinned = skin_surface(
                session.mesh, new_rig, canonical_pose(new_rig)
            )
            await finish_mutation(before)

        async def do_delete_subtree(msg: dict) -> None:
            bid = msg.get("bone_id")
            if bid not in session.rig.bones:
                await send_error("unknown_bone", f"no bone {bid!r}")
                return
            try:
                new_rig = delete_subtree(session.rig, bid)
            except RigError as exc:
                await send_error("invalid_delete", str(exc))
                return
            before = _entries(session)
            session.push_undo()
            session.pose = restrict_pose(session.pose, new_rig)
            session.rig = new_rig
            session.skinned = skin_surface(
                session.mesh, new_rig, canonical_pose(new_rig)
            )
            await finish_mutation(before)

        async def do_undo(msg: dict, redo: bool = False) -> None:
            stack = session.redo_stack if redo else session.undo_stack
            other = session.undo_stack if redo else session.redo_stack
            if not stack:
                await send_error(
                    "nothing_to_redo" if redo else "nothing_to_undo",
                    "stack is empty",
                )
                return
            before = _entries(session)
            other.append(session.snapshot())
            session.restore(stack.pop())
            session.dirty = True
            await send_json(state_delta(session, before))
            await send_mesh()

        async def do_redo(msg: dict) -> None:
            await do_undo(msg, redo=True)

        def resolve_target(ref: str):
            """'<rig_id>' means its mesh.obj; '<rig_id>:<file>.obj' a frame."""
            scene_name, _, fname = str(ref).partition(":")
            entry = scenes.get(scene_name)
            if entry is None:
                return None
            fname = fname or "mesh.obj"
            if not _TARGET_FILE.match(fname):
                return None
            path = os.path.join(entry.directory, fname)
            if not os.path.isfile(path):
                return None
            return load_mesh(path).vertices

        async def retarget_pump(queue: asyncio.Queue) -> None:
            """Consume worker-thread events; apply the result when done."""

            async def safe(coro) -> None:
                try:
                    await coro
                except Exception:  # connection gone; state still applies
                    pass

            while True:
                item = await queue.get()
                if item[0] == "step":
                    await safe(send_json({
                        "v": SCHEMA_V, "type": "retarget_progress",
                        "step": item[1], "cd": item[2],
                    }))
                elif item[0] == "done":
                    rep = item[1]
                    before = _entries(session)
                    session.push_undo()
                    session.pose = rep.final_pose
                    session.busy = False
                    session.dirty = True
                    await safe(send_json({
                        "v": SCHEMA_V, "type": "retarget_done",
                        "step": rep.steps[-1]["step"], "cd": rep.final_cd,
                        "stopped": rep.stopped,
                    }))
                    await safe(send_json(state_delta(session, before)))
                    await safe(send_mesh())
                    return
                else:
                    session.busy = False
                    log.warning("retarget failed: %s", item[1])
                    await safe(send_error("retarget_failed", str(item[1])))
                    return

        async def do_retarget(msg: dict) -> None:
            try:
                steps = int(msg["steps"])
            except (KeyError, TypeError, ValueError):
                await send_error(
                    "bad_message", "retarget_start needs integer steps"
                )
                return
            if not 1 <= steps <= MAX_RETARGET_STEPS:
                await send_error(
                    "bad_message",
                    f"steps must be in [1, {MAX_RETARGET_STEPS}]",
                )
                return
            ref = msg.get("target_ref")
            target = resolve_target(ref)
            if target is None:
                await send_error("unknown_target", f"cannot resolve {ref!r}")
                return
            before = _entries(session)
            session.busy = True
            await send_json(state_delta(session, before))

            loop = asyncio.get_running_loop()
            queue: asyncio.Queue = asyncio.Queue()
            rig, skinned, pose = session.rig, session.skinned, session.pose

            def on_step(step: int, cd: float) -> None:
                loop.call_soon_threadsafe(queue.put_nowait, ("step", step, cd))

            def work() -> None:
                cfg = OptimConfig(step_size=0.5, max_steps=steps,
                                  convergence_tol=0.0)
                try:
                    rep = retarget(rig, skinned, pose, target, cfg,
                                   on_step=on_step)
                    loop.call_soon_threadsafe(queue.put_nowait, ("done", rep))
                except Exception as exc:
                    loop.call_soon_threadsafe(queue.put_nowait, ("fail", exc))

            loop.run_in_executor(None, work)
            asyncio.create_task(retarget_pump(queue))

        handlers = {
            "set_bone_local": do_set_bone_local,
            "add_children": do_add_children,
            "delete_subtree": do_delete_subtree,
            "undo": do_undo,
            "redo": do_redo,
            "retarget_start": do_retarget,
        }

        try:
            while True:
                raw = await websocket.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    await send_error("bad_message", "not valid JSON")
                    continue
                if not isinstance(msg, dict):
                    await send_error("bad_message", "expected a JSON object")
                    continue
                if msg.get("v", SCHEMA_V) != SCHEMA_V:
                    await send_error(
                        "bad_message", f"unsupported schema v={msg.get('v')!r}"
                    )
                    continue
                handler = handlers.get(msg.get("type"))
                if handler is None:
                    await send_error(
                        "bad_message",
                        f"unknown message type {msg.get('type')!r}",
                    )
                    continue
                if session.busy:
                    await send_error(
                        "busy", "retarget in progress; request rejected"
                    )
                    continue
                await handler(msg)
        except WebSocketDisconnect:
            return

    return app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="boneforge-serve",
        description="Serve rigs for interactive manipulation.",
    )
    parser.add_argument("--scenes", required=True,
                        help="root directory of scene folders")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8765)
    parser.add_argument("--max-undo", type=int, default=MAX_UNDO_DEFAULT)
    parser.add_argument("--cors-origin", action="append", default=None,
                        help="allowed origin (repeatable; default any)")
    args = parser.parse_args(argv)

    import uvicorn

    app = create_app(args.scenes, max_undo=args.max_undo,
                     cors_origins=tuple(args.cors_origin or ("*",)))
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
