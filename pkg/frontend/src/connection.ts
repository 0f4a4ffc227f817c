// One WebSocket per session, messages handled strictly in arrival
// order. A binary mesh_update is a JSON envelope followed by one binary
// frame; the envelope is held until its frame arrives, which is the
// next binary message on the socket.

import {
  ClientMsg,
  ErrorMsg,
  MeshUpdateEnvelope,
  parseVertexFrame,
  RetargetDone,
  RetargetProgress,
  ServerMsg,
  StateDelta,
} from "./protocol";

export interface SessionHandlers {
  onDelta?(delta: StateDelta): void;
  onMesh?(vertices: Float32Array): void;
  onProgress?(progress: RetargetProgress): void;
  onDone?(done: RetargetDone): void;
  onError?(error: ErrorMsg): void;
  onStatus?(connected: boolean): void;
}

// The subset of the browser WebSocket the session needs; node tests
// inject the `ws` package's compatible implementation.
export interface SocketLike {
  binaryType: string;
  readyState: number;
  send(data: string): void;
  close(): void;
  onopen: ((ev: unknown) => void) | null;
  onclose: ((ev: unknown) => void) | null;
  onerror: ((ev: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

const OPEN = 1;

function defaultFactory(url: string): SocketLike {
  return new WebSocket(url) as unknown as SocketLike;
}

export class LiveSession {
  private socket: SocketLike;
  private pendingEnvelope: MeshUpdateEnvelope | null = null;

  constructor(
    url: string,
    private handlers: SessionHandlers,
    factory: SocketFactory = defaultFactory,
  ) {
    this.socket = factory(url);
    this.socket.binaryType = "arraybuffer";
    this.socket.onopen = () => this.handlers.onStatus?.(true);
    this.socket.onclose = () => this.handlers.onStatus?.(false);
    this.socket.onerror = () => this.handlers.onStatus?.(false);
    this.socket.onmessage = (ev) => this.receive(ev.data);
  }

  get open(): boolean {
    return this.socket.readyState === OPEN;
  }

  send(msg: ClientMsg): boolean {
    if (!this.open) return false;
    this.socket.send(JSON.stringify(msg));
    return true;
  }

  close(): void {
    this.socket.close();
  }

  private receive(data: unknown): void {
    if (typeof data === "string") {
      let msg: ServerMsg;
      try {
        msg = JSON.parse(data);
      } catch {
        return;
      }
      this.dispatch(msg);
      return;
    }
    // Binary frame: completes the held mesh envelope.
    const buf = data instanceof ArrayBuffer ? data : null;
    if (buf === null || this.pendingEnvelope === null) return;
    this.pendingEnvelope = null;
    this.handlers.onMesh?.(parseVertexFrame(buf));
  }

  private dispatch(msg: ServerMsg): void {
    switch (msg.type) {
      case "state_delta":
        this.handlers.onDelta?.(msg);
        return;
      case "mesh_update":
        if (msg.encoding === "binary") {
          this.pendingEnvelope = msg;
        } else if (msg.vertices) {
          this.handlers.onMesh?.(new Float32Array(msg.vertices.flat()));
        }
        return;
      case "retarget_progress":
        this.handlers.onProgress?.(msg);
        return;
      case "retarget_done":
        this.handlers.onDone?.(msg);
        return;
      case "error":
        this.handlers.onError?.(msg);
        return;
    }
  }
}
