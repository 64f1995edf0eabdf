// Top-down rendering of the crossing. The scene derives everything from the
// latest server tick frame (the client predicts nothing); when focus is on
// the phone the road layer dims and the maze panel sharpens, and vice versa.

import { Maze } from "./maze";
import { HeadOrientation, TickFrame, ledLit } from "./protocol";

// road geometry constants mirrored from the simulation config
export const CROSSING_LENGTH = 5.0;
export const CROSSWALK_WIDTH = 2.5;
export const LANE_WIDTH = 3.5;
export const VEHICLE_LENGTH = 4.5;
export const VEHICLE_WIDTH = 1.8;
export const PED_PATH_X = CROSSWALK_WIDTH / 2;
export const LANE_Y_MIN = (CROSSING_LENGTH - LANE_WIDTH) / 2;

// world window along the travel axis, meters
const WORLD_X_MIN = -75.0;
const WORLD_X_MAX = 40.0;

export interface SceneRect {
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface SceneModel {
  road: SceneRect;
  crosswalk: SceneRect;
  vehicles: SceneRect[];
  pedestrian: { x: number; y: number; r: number };
  led: { color: "off" | "white" | "blue"; lit: boolean };
  roadDimmed: boolean;
  mazeSharp: boolean;
  status: string;
}

export interface Viewport {
  width: number;
  height: number;
}

function xToCanvas(x: number, view: Viewport): number {
  return ((x - WORLD_X_MIN) / (WORLD_X_MAX - WORLD_X_MIN)) * view.width;
}

function scale(view: Viewport): number {
  return view.width / (WORLD_X_MAX - WORLD_X_MIN);
}

// the pedestrian axis runs bottom (y=0, starting curb) to top of the canvas
function yToCanvas(y: number, view: Viewport): number {
  const margin = 0.15 * view.height;
  const span = view.height - 2 * margin;
  return view.height - margin - (y / CROSSING_LENGTH) * span;
}

export function deriveScene(
  tick: TickFrame,
  focus: HeadOrientation,
  view: Viewport
): SceneModel {
  const s = scale(view);
  const pedSpan = (view.height - 0.3 * view.height) / CROSSING_LENGTH;
  const laneTop = yToCanvas(LANE_Y_MIN + LANE_WIDTH, view);
  const road: SceneRect = {
    x: 0,
    y: laneTop,
    w: view.width,
    h: LANE_WIDTH * pedSpan,
  };
  const crosswalk: SceneRect = {
    x: xToCanvas(0, view),
    y: laneTop,
    w: CROSSWALK_WIDTH * s,
    h: LANE_WIDTH * pedSpan,
  };
  const laneCenterCanvas = yToCanvas(LANE_Y_MIN + LANE_WIDTH / 2, view);
  const vehicles = tick.vehicles.map((veh) => ({
    x: xToCanvas(veh.x - VEHICLE_LENGTH, view),
    y: laneCenterCanvas - (VEHICLE_WIDTH * pedSpan) / 2,
    w: VEHICLE_LENGTH * s,
    h: VEHICLE_WIDTH * pedSpan,
  }));
  return {
    road,
    crosswalk,
    vehicles,
    pedestrian: {
      x: xToCanvas(PED_PATH_X, view),
      y: yToCanvas(tick.ped.y, view),
      r: Math.max(4, 0.25 * pedSpan),
    },
    led: { color: tick.led.state, lit: ledLit(tick.led) },
    roadDimmed: focus === "phone",
    mazeSharp: focus === "phone",
    status: tick.trial_status,
  };
}

export function drawScene(ctx: CanvasRenderingContext2D, model: SceneModel, view: Viewport): void {
  ctx.clearRect(0, 0, view.width, view.height);
  ctx.fillStyle = "#2e7d32";
  ctx.fillRect(0, 0, view.width, view.height);

  ctx.fillStyle = "#424242";
  ctx.fillRect(model.road.x, model.road.y, model.road.w, model.road.h);

  // zebra stripes
  ctx.fillStyle = "#e0e0e0";
  const stripes = 6;
  const stripeH = model.crosswalk.h / (2 * stripes);
  for (let i = 0; i < stripes; i++) {
    ctx.fillRect(
      model.crosswalk.x,
      model.crosswalk.y + 2 * i * stripeH,
      model.crosswalk.w,
      stripeH
    );
  }

  // smart LED strips flank the crosswalk
  const ledColor =
    model.led.color === "off" || !model.led.lit
      ? "#263238"
      : model.led.color === "white"
        ? "#ffffff"
        : "#2196f3";
  ctx.fillStyle = ledColor;
  ctx.fillRect(model.crosswalk.x - 6, model.crosswalk.y, 4, model.crosswalk.h);
  ctx.fillRect(model.crosswalk.x + model.crosswalk.w + 2, model.crosswalk.y, 4, model.crosswalk.h);

  ctx.fillStyle = "#ffb300";
  for (const veh of model.vehicles) {
    ctx.fillRect(veh.x, veh.y, veh.w, veh.h);
  }

  ctx.beginPath();
  ctx.fillStyle = "#d32f2f";
  ctx.arc(model.pedestrian.x, model.pedestrian.y, model.pedestrian.r, 0, 2 * Math.PI);
  ctx.fill();

  if (model.roadDimmed) {
    ctx.fillStyle = "rgba(10, 10, 10, 0.65)";
    ctx.fillRect(0, 0, view.width, view.height);
  }
}

export function drawMaze(
  ctx: CanvasRenderingContext2D,
  maze: Maze,
  view: Viewport,
  sharp: boolean
): void {
  ctx.clearRect(0, 0, view.width, view.height);
  ctx.fillStyle = "#fafafa";
  ctx.fillRect(0, 0, view.width, view.height);
  const cell = Math.min(view.width, view.height) / maze.size;
  ctx.strokeStyle = "#212121";
  ctx.lineWidth = 2;
  for (let row = 0; row < maze.size; row++) {
    for (let col = 0; col < maze.size; col++) {
      const x = col * cell;
      const y = row * cell;
      const open = maze.openDirections({ row, col });
      ctx.beginPath();
      if (!open.includes("up")) {
        ctx.moveTo(x, y);
        ctx.lineTo(x + cell, y);
      }
      if (!open.includes("left")) {
        ctx.moveTo(x, y);
        ctx.lineTo(x, y + cell);
      }
      if (row === maze.size - 1 && !open.includes("down")) {
        ctx.moveTo(x, y + cell);
        ctx.lineTo(x + cell, y + cell);
      }
      if (col === maze.size - 1 && !open.includes("right")) {
        ctx.moveTo(x + cell, y);
        ctx.lineTo(x + cell, y + cell);
      }
      ctx.stroke();
    }
  }
  ctx.fillStyle = "#43a047";
  ctx.fillRect(maze.target.col * cell + 4, maze.target.row * cell + 4, cell - 8, cell - 8);
  ctx.fillStyle = "#1e88e5";
  ctx.beginPath();
  ctx.arc(
    maze.current.col * cell + cell / 2,
    maze.current.row * cell + cell / 2,
    cell / 3,
    0,
    2 * Math.PI
  );
  ctx.fill();
  if (!sharp) {
    ctx.fillStyle = "rgba(250, 250, 250, 0.82)";
    ctx.fillRect(0, 0, view.width, view.height);
  }
}
