// Thin HTTP + WebSocket wrapper over the gateway's control plane.

import { InputFrame, ServerFrame, encodeInput, parseServerFrame } from "./protocol";

export interface ParticipantMeta {
  gender: "female" | "male";
  age_band: "18-30" | "30+";
  years_smartphone: number;
  has_license: boolean;
}

export interface SessionDescriptor {
  session_id: string;
  status: string;
  plan: Record<string, number>;
  trials_run: number;
  next_condition: string | null;
  progress: { block: number; successes: number; complete: boolean };
}

export interface TrialHandle {
  trial_index: number;
  condition: string;
  practice: boolean;
  stream: string;
}

export interface TrialSocketHandlers {
  onFrame: (frame: ServerFrame) => void;
  onClose: (clean: boolean) => void;
}

export class GatewayClient {
  constructor(private baseUrl: string) {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    const response = await fetch(this.baseUrl + path, init);
    if (!response.ok) {
      throw new Error(`${path}: HTTP ${response.status}`);
    }
    return response.json();
  }

  createSession(
    participant: ParticipantMeta,
    options: { plan?: Record<string, number>; seed?: number; pacing?: string } = {}
  ): Promise<SessionDescriptor> {
    return this.request("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ participant, ...options }),
    }) as Promise<SessionDescriptor>;
  }

  getSession(sessionId: string): Promise<SessionDescriptor> {
    return this.request(`/sessions/${sessionId}`) as Promise<SessionDescriptor>;
  }

  startTrial(sessionId: string, practice = false): Promise<TrialHandle> {
    return this.request(`/sessions/${sessionId}/trials`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ practice }),
    }) as Promise<TrialHandle>;
  }

  async fetchArtifact(sessionId: string, kind: string): Promise<string> {
    const response = await fetch(`${this.baseUrl}/sessions/${sessionId}/artifacts/${kind}`);
    if (!response.ok) {
      throw new Error(`artifact ${kind}: HTTP ${response.status}`);
    }
    return response.text();
  }

  connectTrial(sessionId: string, handlers: TrialSocketHandlers): TrialSocket {
    const wsBase = this.baseUrl.replace(/^http/, "ws");
    const socket = new WebSocket(`${wsBase}/sessions/${sessionId}/trial`);
    return new TrialSocket(socket, handlers);
  }
}

export class TrialSocket {
  private closedCleanly = false;

  constructor(private socket: WebSocket, handlers: TrialSocketHandlers) {
    socket.onmessage = (event) => {
      let frame: ServerFrame;
      try {
        frame = parseServerFrame(String(event.data));
      } catch {
        return; // ignore malformed frames
      }
      if (frame.type === "trial_end" || frame.type === "error") {
        this.closedCleanly = true;
      }
      handlers.onFrame(frame);
    };
    socket.onclose = () => handlers.onClose(this.closedCleanly);
  }

  send(frame: InputFrame): boolean {
    if (this.socket.readyState !== WebSocket.OPEN) {
      return false; // dropped; the caller shows the disconnect indicator
    }
    this.socket.send(encodeInput(frame));
    return true;
  }

  close(): void {
    this.socket.close();
  }
}
