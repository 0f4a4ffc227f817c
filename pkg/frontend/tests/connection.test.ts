import { describe, expect, it } from "vitest";
import { LiveSession, SocketLike } from "../src/connection";
import type { ErrorMsg, RetargetDone, RetargetProgress, StateDelta } from "../src/protocol";

class FakeSocket implements SocketLike {
  binaryType = "blob";
  readyState = 0;
  sent: string[] = [];
  onopen: ((ev: unknown) => void) | null = null;
  onclose: ((ev: unknown) => void) | null = null;
  onerror: ((ev: unknown) => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    this.readyState = 3;
    this.onclose?.({});
  }

  open(): void {
    this.readyState = 1;
    this.onopen?.({});
  }

  emit(data: unknown): void {
    this.onmessage?.({ data });
  }
}

function vertexFrame(verts: number[]): ArrayBuffer {
  const buf = new ArrayBuffer(4 + verts.length * 4);
  const view = new DataView(buf);
  view.setUint32(0, verts.length / 3, true);
  verts.forEach((v, i) => view.setFloat32(4 + 4 * i, v, true));
  return buf;
}

function setup() {
  const socket = new FakeSocket();
  const got = {
    deltas: [] as StateDelta[],
    meshes: [] as Float32Array[],
    progress: [] as RetargetProgress[],
    done: [] as RetargetDone[],
    errors: [] as ErrorMsg[],
    status: [] as boolean[],
  };
  const session = new LiveSession(
    "ws://test",
    {
      onDelta: (d) => got.deltas.push(d),
      onMesh: (v) => got.meshes.push(v),
      onProgress: (p) => got.progress.push(p),
      onDone: (d) => got.done.push(d),
      onError: (e) => got.errors.push(e),
      onStatus: (up) => got.status.push(up),
    },
    () => socket,
  );
  return { socket, got, session };
}

describe("LiveSession", () => {
  it("requests arraybuffer binary frames", () => {
    const { socket } = setup();
    expect(socket.binaryType).toBe("arraybuffer");
  });

  it("refuses to send before the socket opens, then sends", () => {
    const { socket, session } = setup();
    expect(session.send({ v: 1, type: "undo" })).toBe(false);
    socket.open();
    expect(session.send({ v: 1, type: "undo" })).toBe(true);
    expect(JSON.parse(socket.sent[0])).toEqual({ v: 1, type: "undo" });
  });

  it("pairs a binary envelope with the following frame", () => {
    const { socket, got } = setup();
    socket.open();
    socket.emit(JSON.stringify({ v: 1, type: "mesh_update", encoding: "binary", count: 2 }));
    expect(got.meshes).toHaveLength(0);
    socket.emit(vertexFrame([1, 2, 3, 4, 5, 6]));
    expect(got.meshes).toHaveLength(1);
    expect([...got.meshes[0]]).toEqual([1, 2, 3, 4, 5, 6]);
  });

  it("ignores binary data that no envelope announced", () => {
    const { socket, got } = setup();
    socket.open();
    socket.emit(vertexFrame([1, 2, 3]));
    expect(got.meshes).toHaveLength(0);
  });

  it("decodes json-encoded mesh updates", () => {
    const { socket, got } = setup();
    socket.open();
    socket.emit(
      JSON.stringify({ v: 1, type: "mesh_update", encoding: "json", vertices: [[1, 2, 3]] }),
    );
    expect(got.meshes).toHaveLength(1);
    expect([...got.meshes[0]]).toEqual([1, 2, 3]);
  });

  it("dispatches deltas, progress, done, and errors by type", () => {
    const { socket, got } = setup();
    socket.open();
    socket.emit(
      JSON.stringify({
        v: 1, type: "state_delta", changed: [], removed: [],
        pose_frame: "current", undo_depth: 1, redo_depth: 0, busy: false, dirty: true,
      }),
    );
    socket.emit(JSON.stringify({ v: 1, type: "retarget_progress", step: 3, cd: 0.5 }));
    socket.emit(JSON.stringify({ v: 1, type: "retarget_done", step: 9, cd: 0.1, stopped: "max_steps" }));
    socket.emit(JSON.stringify({ v: 1, type: "error", code: "busy", message: "no" }));
    expect(got.deltas).toHaveLength(1);
    expect(got.progress[0].step).toBe(3);
    expect(got.done[0].stopped).toBe("max_steps");
    expect(got.errors[0].code).toBe("busy");
  });

  it("survives malformed text frames", () => {
    const { socket, got } = setup();
    socket.open();
    socket.emit("{not json");
    expect(got.errors).toHaveLength(0);
    expect(got.deltas).toHaveLength(0);
  });

  it("reports connection status transitions", () => {
    const { socket, got, session } = setup();
    socket.open();
    session.close();
    expect(got.status).toEqual([true, false]);
  });
});
