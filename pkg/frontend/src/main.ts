// Browser entry point: wires the meta form, the road canvas, the maze panel
// and the keyboard pipeline to the gateway.

import { GatewayClient, ParticipantMeta, SessionDescriptor, TrialSocket } from "./client";
import { ParticipantFlow } from "./flow";
import { InputPipeline } from "./input";
import { TickFrame } from "./protocol";
import { Viewport, deriveScene, drawMaze, drawScene } from "./scene";

const serverUrl =
  new URLSearchParams(location.search).get("server") ?? location.origin;

const client = new GatewayClient(serverUrl);
const flow = new ParticipantFlow(2);

const roadCanvas = document.getElementById("road") as HTMLCanvasElement;
const mazeCanvas = document.getElementById("maze") as HTMLCanvasElement;
const statusLine = document.getElementById("status") as HTMLElement;
const banner = document.getElementById("banner") as HTMLElement;
const form = document.getElementById("meta-form") as HTMLFormElement;
const startButton = document.getElementById("start-trial") as HTMLButtonElement;

const roadView: Viewport = { width: roadCanvas.width, height: roadCanvas.height };
const mazeView: Viewport = { width: mazeCanvas.width, height: mazeCanvas.height };

let descriptor: SessionDescriptor | null = null;
let pipeline = new InputPipeline(Date.now() & 0xffff);
let socket: TrialSocket | null = null;
let latestTick: TickFrame | null = null;
let trialRunning = false;
let sendTimer: number | null = null;

function setStatus(text: string): void {
  statusLine.textContent = text;
}

function refreshStage(): void {
  const stage = flow.stage(descriptor);
  switch (stage.kind) {
    case "meta":
      setStatus("Enter participant details to begin.");
      startButton.disabled = true;
      break;
    case "practice":
      setStatus(`Practice trial (${stage.remaining} left). Press Start when ready.`);
      startButton.disabled = false;
      break;
    case "trial":
      setStatus(`Next: ${stage.condition.replace(/_/g, " ")} trial. Press Start when ready.`);
      startButton.disabled = false;
      break;
    case "complete":
      setStatus("Session complete. Thank you!");
      startButton.disabled = true;
      break;
  }
}

form.addEventListener("submit", async (event) => {
  event.preventDefault();
  const data = new FormData(form);
  const meta: ParticipantMeta = {
    gender: data.get("gender") as ParticipantMeta["gender"],
    age_band: data.get("age_band") as ParticipantMeta["age_band"],
    years_smartphone: Number(data.get("years_smartphone") ?? 5),
    has_license: data.get("has_license") === "on",
  };
  descriptor = await client.createSession(meta, { pacing: "realtime" });
  flow.begin();
  refreshStage();
});

startButton.addEventListener("click", async () => {
  if (descriptor === null || trialRunning) {
    return;
  }
  const stage = flow.stage(descriptor);
  const practice = stage.kind === "practice";
  await client.startTrial(descriptor.session_id, practice);
  pipeline = new InputPipeline(Date.now() & 0xffff);
  latestTick = null;
  trialRunning = true;
  startButton.disabled = true;
  banner.hidden = true;

  socket = client.connectTrial(descriptor.session_id, {
    onFrame: (frame) => {
      if (frame.type === "tick") {
        latestTick = frame;
      } else if (frame.type === "trial_end" || frame.type === "error") {
        void finishTrial(practice);
      }
    },
    onClose: (clean) => {
      if (!clean && trialRunning) {
        banner.hidden = false; // reconnect banner; the trial was aborted server-side
        void finishTrial(practice);
      }
    },
  });

  // stream the current input state at client cadence
  sendTimer = window.setInterval(() => {
    if (socket !== null && trialRunning) {
      socket.send(pipeline.buildFrame(performance.now() / 1000));
    }
  }, 1000 / 60);
});

async function finishTrial(practice: boolean): Promise<void> {
  if (!trialRunning) {
    return;
  }
  trialRunning = false;
  if (sendTimer !== null) {
    window.clearInterval(sendTimer);
    sendTimer = null;
  }
  socket?.close();
  socket = null;
  if (practice) {
    flow.recordPractice();
  }
  if (descriptor !== null) {
    descriptor = await client.getSession(descriptor.session_id);
  }
  refreshStage();
}

window.addEventListener("keydown", (event) => {
  if (trialRunning && pipeline.keyDown(event.key)) {
    event.preventDefault();
  }
});
window.addEventListener("keyup", (event) => {
  if (trialRunning && pipeline.keyUp(event.key)) {
    event.preventDefault();
  }
});

function renderLoop(): void {
  const ctx = roadCanvas.getContext("2d");
  const mazeCtx = mazeCanvas.getContext("2d");
  if (ctx !== null && latestTick !== null) {
    drawScene(ctx, deriveScene(latestTick, pipeline.focus, roadView), roadView);
  }
  if (mazeCtx !== null) {
    drawMaze(mazeCtx, pipeline.maze.maze, mazeView, pipeline.focus === "phone");
  }
  requestAnimationFrame(renderLoop);
}

refreshStage();
renderLoop();
