import { StateMsg } from "./protocol.js";

// Tile palette. Grid characters come from the server's layout text:
// W wall counter, . floor, O onion pile, B plate pile, P pot, X serving
// window. Agents and pot contents ride in the state message.

const COLORS = {
  floor: "#8a6f4d",
  wall: "#c8b68f",
  onionPile: "#e0a826",
  platePile: "#e8e4da",
  pot: "#3d3a38",
  goal: "#7a9e63",
  agent0: "#3f7fbf",
  agent1: "#bf4f3f",
  soup: "#d98e23",
  text: "#20201e",
};

const DIR_DELTAS: [number, number][] = [[-1, 0], [1, 0], [0, -1], [0, 1]];

export class RenderError extends Error {}

function checkSnapshot(state: StateMsg): void {
  if (!Array.isArray(state.grid) || state.grid.length === 0) {
    throw new RenderError("snapshot has no grid");
  }
  const width = state.grid[0].length;
  if (state.grid.some((row) => row.length !== width)) {
    throw new RenderError("ragged grid rows");
  }
  if (!Array.isArray(state.agents) || state.agents.length !== 2) {
    throw new RenderError("snapshot needs exactly two agents");
  }
  for (const agent of state.agents) {
    const [r, c] = agent.pos;
    if (r < 0 || r >= state.grid.length || c < 0 || c >= width) {
      throw new RenderError(`agent off the board at ${agent.pos}`);
    }
  }
}

export interface HudInfo {
  timeLeft: number;
  roundLabel: string;
}

/** Draw one frame: HUD strip on top, then the tile grid. Throws
 * RenderError on a malformed snapshot so the caller can show a banner
 * and keep the session alive. */
export function render(ctx: CanvasRenderingContext2D, state: StateMsg,
                       hud: HudInfo): void {
  checkSnapshot(state);
  const rows = state.grid.length;
  const cols = state.grid[0].length;
  const hudH = 28;
  const canvas = ctx.canvas;
  const tile = Math.floor(Math.min(canvas.width / cols,
                                   (canvas.height - hudH) / rows));
  const ox = Math.floor((canvas.width - tile * cols) / 2);
  const oy = hudH;

  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.fillStyle = COLORS.text;
  ctx.font = "14px system-ui, sans-serif";
  ctx.textBaseline = "middle";
  ctx.fillText(`score ${state.score}`, 8, hudH / 2);
  ctx.fillText(`${hud.timeLeft} steps left`, 110, hudH / 2);
  ctx.fillText(hud.roundLabel, 230, hudH / 2);

  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      drawTile(ctx, state.grid[r][c], ox + c * tile, oy + r * tile, tile);
    }
  }
  for (const pot of state.pots) {
    drawPot(ctx, pot.count, pot.timer,
            ox + pot.pos[1] * tile, oy + pot.pos[0] * tile, tile);
  }
  for (const item of state.counters) {
    drawHeld(ctx, item.item, ox + item.pos[1] * tile + tile / 2,
             oy + item.pos[0] * tile + tile / 2, tile * 0.18);
  }
  state.agents.forEach((agent, i) => {
    const cx = ox + agent.pos[1] * tile + tile / 2;
    const cy = oy + agent.pos[0] * tile + tile / 2;
    ctx.fillStyle = i === 0 ? COLORS.agent0 : COLORS.agent1;
    ctx.beginPath();
    ctx.arc(cx, cy, tile * 0.34, 0, 2 * Math.PI);
    ctx.fill();
    const [dr, dc] = DIR_DELTAS[agent.dir] ?? [1, 0];
    ctx.fillStyle = "#ffffff";
    ctx.beginPath();
    ctx.arc(cx + dc * tile * 0.18, cy + dr * tile * 0.18, tile * 0.09,
            0, 2 * Math.PI);
    ctx.fill();
    if (agent.held !== "none") {
      drawHeld(ctx, agent.held, cx + tile * 0.22, cy - tile * 0.22, tile * 0.13);
    }
  });
}

function drawTile(ctx: CanvasRenderingContext2D, ch: string,
                  x: number, y: number, tile: number): void {
  let fill = COLORS.floor;
  if (ch === "W") fill = COLORS.wall;
  else if (ch === "O") fill = COLORS.onionPile;
  else if (ch === "B") fill = COLORS.platePile;
  else if (ch === "P") fill = COLORS.pot;
  else if (ch === "X") fill = COLORS.goal;
  ctx.fillStyle = fill;
  ctx.fillRect(x, y, tile, tile);
  ctx.strokeStyle = "rgba(0,0,0,0.15)";
  ctx.strokeRect(x + 0.5, y + 0.5, tile - 1, tile - 1);
  if (ch === "O" || ch === "B") {
    ctx.fillStyle = ch === "O" ? "#b98415" : "#c9c4b8";
    ctx.beginPath();
    ctx.arc(x + tile / 2, y + tile / 2, tile * 0.22, 0, 2 * Math.PI);
    ctx.fill();
  }
}

function drawPot(ctx: CanvasRenderingContext2D, count: number, timer: number,
                 x: number, y: number, tile: number): void {
  const ready = count === 3 && timer === 0;
  ctx.fillStyle = ready ? COLORS.soup : "#57524e";
  ctx.beginPath();
  ctx.arc(x + tile / 2, y + tile / 2, tile * 0.3, 0, 2 * Math.PI);
  ctx.fill();
  ctx.fillStyle = "#f3e9c8";
  for (let i = 0; i < count; i++) {
    ctx.beginPath();
    ctx.arc(x + tile * (0.32 + 0.18 * i), y + tile * 0.42, tile * 0.06,
            0, 2 * Math.PI);
    ctx.fill();
  }
  if (count === 3 && timer > 0) {
    ctx.fillStyle = "#ffffff";
    ctx.font = `${Math.floor(tile * 0.3)}px system-ui, sans-serif`;
    ctx.textBaseline = "alphabetic";
    ctx.fillText(String(timer), x + tile * 0.38, y + tile * 0.85);
  }
}

function drawHeld(ctx: CanvasRenderingContext2D, item: string,
                  cx: number, cy: number, radius: number): void {
  if (item === "onion") ctx.fillStyle = COLORS.onionPile;
  else if (item === "plate") ctx.fillStyle = COLORS.platePile;
  else if (item === "soup") ctx.fillStyle = COLORS.soup;
  else return;
  ctx.beginPath();
  ctx.arc(cx, cy, radius, 0, 2 * Math.PI);
  ctx.fill();
  ctx.strokeStyle = "rgba(0,0,0,0.4)";
  ctx.stroke();
}
