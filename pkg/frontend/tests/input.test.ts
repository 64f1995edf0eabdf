import { describe, expect, it } from "vitest";

import { InputPipeline, WALK_TARGET } from "../src/input";

describe("input pipeline", () => {
  it("holding the walk key streams walk frames, release streams stop", () => {
    const pipeline = new InputPipeline(1);
    expect(pipeline.buildFrame(0).walk).toEqual({ cmd: "stop" });
    pipeline.keyDown(" ");
    expect(pipeline.buildFrame(0.1).walk).toEqual({ cmd: "walk", target: WALK_TARGET });
    expect(pipeline.buildFrame(0.2).walk).toEqual({ cmd: "walk", target: WALK_TARGET });
    pipeline.keyUp(" ");
    expect(pipeline.buildFrame(0.3).walk).toEqual({ cmd: "stop" });
  });

  it("tab toggles focus and emits a one-shot head toggle", () => {
    const pipeline = new InputPipeline(1);
    expect(pipeline.keyDown("Tab")).toBe(true);
    expect(pipeline.focus).toBe("phone");
    expect(pipeline.buildFrame(0).head_toggle).toBe("phone");
    expect(pipeline.buildFrame(0.1).head_toggle).toBeUndefined();
    pipeline.keyDown("Tab");
    expect(pipeline.buildFrame(0.2).head_toggle).toBe("road");
  });

  it("arrow keys are gated on phone focus", () => {
    const pipeline = new InputPipeline(1);
    expect(pipeline.keyDown("ArrowRight")).toBe(false);
    expect(pipeline.buildFrame(0).maze_move).toBeUndefined();
    pipeline.keyDown("Tab");
    // find a legal first move so the event emits a maze_move
    const legal = pipeline.maze.maze.openDirections({ row: 0, col: 0 })[0];
    const key = { up: "ArrowUp", down: "ArrowDown", left: "ArrowLeft", right: "ArrowRight" }[legal];
    expect(pipeline.keyDown(key)).toBe(true);
    expect(pipeline.buildFrame(0).maze_move).toBe(legal);
  });

  it("solving a maze emits the solved marker", () => {
    const pipeline = new InputPipeline(3);
    pipeline.keyDown("Tab");
    // breadth-first search the maze, then replay the path as arrow keys
    const maze = pipeline.maze.maze;
    const parent = new Map<string, { key: string; dir: string }>();
    const queue = [{ row: 0, col: 0 }];
    const seen = new Set(["0,0"]);
    while (queue.length) {
      const cell = queue.shift()!;
      for (const dir of maze.openDirections(cell)) {
        const next = {
          up: { row: cell.row - 1, col: cell.col },
          down: { row: cell.row + 1, col: cell.col },
          left: { row: cell.row, col: cell.col - 1 },
          right: { row: cell.row, col: cell.col + 1 },
        }[dir]!;
        const key = `${next.row},${next.col}`;
        if (!seen.has(key)) {
          seen.add(key);
          parent.set(key, { key: `${cell.row},${cell.col}`, dir });
          queue.push(next);
        }
      }
    }
    const path: string[] = [];
    let key = `${maze.target.row},${maze.target.col}`;
    while (key !== "0,0") {
      const step = parent.get(key)!;
      path.unshift(step.dir);
      key = step.key;
    }
    const arrows: Record<string, string> = {
      up: "ArrowUp", down: "ArrowDown", left: "ArrowLeft", right: "ArrowRight",
    };
    let solved = false;
    for (const dir of path) {
      pipeline.keyDown(arrows[dir]);
      if (pipeline.buildFrame(0).maze_move === "solved") {
        solved = true;
      }
    }
    expect(solved).toBe(true);
    expect(pipeline.maze.solvedCount).toBe(1);
  });
});
