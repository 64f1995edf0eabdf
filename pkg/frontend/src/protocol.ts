// Wire protocol (schema v1) shared with the session gateway.
// Every frame is one JSON object per WebSocket message; times in seconds,
// positions in meters.

export const SCHEMA_VERSION = 1;

export type HeadOrientation = "road" | "phone";

export interface PedFrame {
  y: number;
  v: number;
  head: HeadOrientation;
  maze: { active: boolean; solved: number };
}

export interface LedFrame {
  state: "off" | "white" | "blue";
  phase: number;
}

export interface VehicleFrame {
  id: number;
  x: number;
  v: number;
  a: number;
}

export interface TickFrame {
  v: number;
  type: "tick";
  t: number;
  trial_status: "running" | "grace" | "done";
  held: boolean;
  ped: PedFrame;
  led: LedFrame;
  vehicles: VehicleFrame[];
}

export interface AckFrame {
  v: number;
  type: "ack";
  tick: number;
}

export interface TrialEndFrame {
  v: number;
  type: "trial_end";
  session_status: string;
}

export interface ErrorFrame {
  v: number;
  type: "error";
  message: string;
}

export type ServerFrame = TickFrame | AckFrame | TrialEndFrame | ErrorFrame;

export type WalkCommand = { cmd: "walk"; target: number } | { cmd: "stop" };

export interface InputFrame {
  v: number;
  type: "input";
  walk: WalkCommand;
  head_toggle?: HeadOrientation;
  maze_move?: string;
  client_t: number;
}

export class ProtocolError extends Error {}

export function parseServerFrame(text: string): ServerFrame {
  let data: unknown;
  try {
    data = JSON.parse(text);
  } catch {
    throw new ProtocolError("frame is not JSON");
  }
  const frame = data as { v?: number; type?: string };
  if (frame.v !== SCHEMA_VERSION) {
    throw new ProtocolError(`unsupported schema version ${frame.v}`);
  }
  if (!["tick", "ack", "trial_end", "error"].includes(frame.type ?? "")) {
    throw new ProtocolError(`unknown frame type ${frame.type}`);
  }
  return data as ServerFrame;
}

export function encodeInput(frame: InputFrame): string {
  return JSON.stringify(frame);
}

// The LED's 2 Hz square wave runs on the 60 Hz tick grid: 15 ticks on, 15 off.
export function ledLit(led: LedFrame): boolean {
  if (led.state === "blue") {
    return Math.floor(led.phase / 15) % 2 === 0;
  }
  return led.state === "white";
}
