// The distraction task: randomly generated perfect mazes on a 6x6 grid,
// solved with arrow keys while the participant's focus is on the phone.

export type Direction = "up" | "down" | "left" | "right";

export interface Cell {
  row: number;
  col: number;
}

const DELTAS: Record<Direction, [number, number]> = {
  up: [-1, 0],
  down: [1, 0],
  left: [0, -1],
  right: [0, 1],
};

// mulberry32: tiny deterministic PRNG so maze sequences are reproducible
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export class Maze {
  readonly size: number;
  // walls[row][col] = set of directions that are open from that cell
  private open: Set<Direction>[][];
  current: Cell;
  readonly target: Cell;

  constructor(size: number, rand: () => number) {
    this.size = size;
    this.open = Array.from({ length: size }, () =>
      Array.from({ length: size }, () => new Set<Direction>())
    );
    this.carve(rand);
    this.current = { row: 0, col: 0 };
    this.target = { row: size - 1, col: size - 1 };
  }

  private carve(rand: () => number): void {
    // recursive backtracker: visits every cell exactly once, so the maze is
    // perfect (a spanning tree: unique path between any two cells)
    const visited = Array.from({ length: this.size }, () =>
      new Array<boolean>(this.size).fill(false)
    );
    const stack: Cell[] = [{ row: 0, col: 0 }];
    visited[0][0] = true;
    while (stack.length > 0) {
      const cell = stack[stack.length - 1];
      const options: Direction[] = [];
      for (const dir of Object.keys(DELTAS) as Direction[]) {
        const [dr, dc] = DELTAS[dir];
        const row = cell.row + dr;
        const col = cell.col + dc;
        if (row >= 0 && row < this.size && col >= 0 && col < this.size && !visited[row][col]) {
          options.push(dir);
        }
      }
      if (options.length === 0) {
        stack.pop();
        continue;
      }
      const dir = options[Math.floor(rand() * options.length)];
      const [dr, dc] = DELTAS[dir];
      const next = { row: cell.row + dr, col: cell.col + dc };
      this.open[cell.row][cell.col].add(dir);
      this.open[next.row][next.col].add(opposite(dir));
      visited[next.row][next.col] = true;
      stack.push(next);
    }
  }

  canMove(from: Cell, dir: Direction): boolean {
    return this.open[from.row][from.col].has(dir);
  }

  /** Try to move; returns true when the move was legal. */
  move(dir: Direction): boolean {
    if (!this.canMove(this.current, dir)) {
      return false;
    }
    const [dr, dc] = DELTAS[dir];
    this.current = { row: this.current.row + dr, col: this.current.col + dc };
    return true;
  }

  get solved(): boolean {
    return this.current.row === this.target.row && this.current.col === this.target.col;
  }

  openDirections(cell: Cell): Direction[] {
    return [...this.open[cell.row][cell.col]];
  }
}

function opposite(dir: Direction): Direction {
  switch (dir) {
    case "up":
      return "down";
    case "down":
      return "up";
    case "left":
      return "right";
    case "right":
      return "left";
  }
}

/** Sequence of mazes with a solved counter; a fresh puzzle follows each solve. */
export class MazeTask {
  maze: Maze;
  solvedCount = 0;
  private rand: () => number;
  private size: number;

  constructor(seed: number, size = 6) {
    this.rand = mulberry32(seed);
    this.size = size;
    this.maze = new Maze(size, this.rand);
  }

  /** Apply one arrow move; returns "solved" when this move finished a maze. */
  move(dir: Direction): "moved" | "blocked" | "solved" {
    if (!this.maze.move(dir)) {
      return "blocked";
    }
    if (this.maze.solved) {
      this.solvedCount += 1;
      this.maze = new Maze(this.size, this.rand);
      return "solved";
    }
    return "moved";
  }
}
