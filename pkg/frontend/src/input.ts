// Keyboard-to-wire input pipeline. Holding the walk key streams walk
// commands; Tab swaps the attention focus (the head-orientation proxy);
// arrow keys drive the maze only while focus is on the phone.

import { MazeTask, Direction } from "./maze";
import { HeadOrientation, InputFrame, SCHEMA_VERSION, WalkCommand } from "./protocol";

export const WALK_TARGET = 1.4; // m/s, a comfortable walking pace

const ARROWS: Record<string, Direction> = {
  ArrowUp: "up",
  ArrowDown: "down",
  ArrowLeft: "left",
  ArrowRight: "right",
};

export class InputPipeline {
  focus: HeadOrientation = "road";
  walkHeld = false;
  readonly maze: MazeTask;
  private pendingToggle: HeadOrientation | null = null;
  private pendingMaze: string | null = null;

  constructor(mazeSeed: number) {
    this.maze = new MazeTask(mazeSeed);
  }

  /** Returns true when the event was consumed (caller should preventDefault). */
  keyDown(key: string): boolean {
    if (key === " " || key === "Spacebar") {
      this.walkHeld = true;
      return true;
    }
    if (key === "Tab") {
      this.focus = this.focus === "road" ? "phone" : "road";
      this.pendingToggle = this.focus;
      return true;
    }
    if (key in ARROWS) {
      if (this.focus !== "phone") {
        return false; // the attention trade-off: no maze while watching the road
      }
      const result = this.maze.move(ARROWS[key]);
      if (result === "solved") {
        this.pendingMaze = "solved";
      } else if (result === "moved") {
        this.pendingMaze = ARROWS[key];
      }
      return true;
    }
    return false;
  }

  keyUp(key: string): boolean {
    if (key === " " || key === "Spacebar") {
      this.walkHeld = false;
      return true;
    }
    return false;
  }

  /** Build the frame for this client tick, consuming one-shot events. */
  buildFrame(clientT: number): InputFrame {
    const walk: WalkCommand = this.walkHeld
      ? { cmd: "walk", target: WALK_TARGET }
      : { cmd: "stop" };
    const frame: InputFrame = { v: SCHEMA_VERSION, type: "input", walk, client_t: clientT };
    if (this.pendingToggle !== null) {
      frame.head_toggle = this.pendingToggle;
      this.pendingToggle = null;
    }
    if (this.pendingMaze !== null) {
      frame.maze_move = this.pendingMaze;
      this.pendingMaze = null;
    }
    return frame;
  }
}
