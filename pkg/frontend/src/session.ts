import { decodeFrame, ServerMessage } from "./wire.js";

// Structural stand-in for a browser WebSocket so tests can inject a fake.
export interface SocketLike {
  binaryType: string;
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: string | ArrayBuffer }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type ConnectionState = "connecting" | "open" | "down";

/**
 * Owns the websocket and buffers decoded server messages.  Nothing is
 * applied here: the app drains the buffer once per animation frame, so all
 * state changes happen on the render tick, never inside socket callbacks.
 */
export class SessionClient {
  connection: ConnectionState = "connecting";
  lastClose: string | null = null;
  onconnectionchange: ((s: ConnectionState) => void) | null = null;

  private socket: SocketLike | null = null;
  private inbox: ServerMessage[] = [];
  private readonly makeSocket: (url: string) => SocketLike;

  constructor(
    readonly url: string,
    makeSocket?: (url: string) => SocketLike,
  ) {
    this.makeSocket = makeSocket ?? ((u) => new WebSocket(u) as unknown as SocketLike);
  }

  connect(): void {
    if (this.socket !== null) {
      this.socket.onclose = null;
      this.socket.close();
    }
    this.setConnection("connecting");
    let ws: SocketLike;
    try {
      ws = this.makeSocket(this.url);
    } catch (err) {
      this.lastClose = String(err);
      this.setConnection("down");
      return;
    }
    ws.binaryType = "arraybuffer";
    ws.onopen = () => this.setConnection("open");
    ws.onmessage = (ev) => {
      try {
        this.inbox.push(decodeFrame(ev.data));
      } catch (err) {
        console.error("undecodable frame:", err);
      }
    };
    ws.onclose = () => {
      this.lastClose = "connection closed";
      this.setConnection("down");
    };
    ws.onerror = () => {
      this.lastClose = "connection error";
    };
    this.socket = ws;
  }

  /** The banner's retry button. */
  retry(): void {
    this.connect();
  }

  send(payload: string): boolean {
    if (this.connection !== "open" || this.socket === null) return false;
    this.socket.send(payload);
    return true;
  }

  /** Hand over everything received since the last animation frame. */
  drain(): ServerMessage[] {
    if (this.inbox.length === 0) return [];
    const batch = this.inbox;
    this.inbox = [];
    return batch;
  }

  private setConnection(next: ConnectionState): void {
    if (this.connection === next) return;
    this.connection = next;
    this.onconnectionchange?.(next);
  }
}
