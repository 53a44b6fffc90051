// Canvas drawing: arm links from forward kinematics plus task objects.

import { Playback } from "./api.js";
import { chainPositions } from "./fk.js";

const ARM_COLOR = "#2b6cb0";
const JOINT_COLOR = "#1a365d";
const TARGET_COLOR = "#c53030";
const BLOCK_COLOR = "#b7791f";
const TRAIL_COLOR = "rgba(43, 108, 176, 0.25)";

export interface Viewport {
  width: number;
  height: number;
  scale: number; // pixels per world unit
}

export function worldToCanvas(p: { x: number; y: number }, vp: Viewport) {
  return {
    x: vp.width / 2 + p.x * vp.scale,
    y: vp.height / 2 - p.y * vp.scale,
  };
}

export function renderFrame(
  ctx: CanvasRenderingContext2D,
  playback: Playback,
  frame: number,
  vp: Viewport,
): void {
  const t = Math.min(frame, playback.length - 1);
  ctx.clearRect(0, 0, vp.width, vp.height);

  // reach envelope
  ctx.beginPath();
  const total = playback.link_lengths.reduce((a, b) => a + b, 0);
  const origin = worldToCanvas({ x: 0, y: 0 }, vp);
  ctx.arc(origin.x, origin.y, total * vp.scale, 0, 2 * Math.PI);
  ctx.strokeStyle = "#e2e8f0";
  ctx.stroke();

  drawObjects(ctx, playback, t, vp);
  drawTrail(ctx, playback, t, vp);

  const pts = chainPositions(playback.joint_angles[t], playback.link_lengths)
    .map((p) => worldToCanvas(p, vp));
  ctx.lineWidth = 6;
  ctx.lineCap = "round";
  ctx.strokeStyle = ARM_COLOR;
  ctx.beginPath();
  ctx.moveTo(pts[0].x, pts[0].y);
  for (let i = 1; i < pts.length; i++) ctx.lineTo(pts[i].x, pts[i].y);
  ctx.stroke();
  ctx.fillStyle = JOINT_COLOR;
  for (const p of pts) {
    ctx.beginPath();
    ctx.arc(p.x, p.y, 5, 0, 2 * Math.PI);
    ctx.fill();
  }
}

function drawTrail(ctx: CanvasRenderingContext2D, playback: Playback,
                   t: number, vp: Viewport): void {
  ctx.strokeStyle = TRAIL_COLOR;
  ctx.lineWidth = 2;
  ctx.beginPath();
  for (let k = Math.max(0, t - 30); k <= t; k++) {
    const pts = chainPositions(playback.joint_angles[k], playback.link_lengths);
    const ee = worldToCanvas(pts[pts.length - 1], vp);
    if (k === Math.max(0, t - 30)) ctx.moveTo(ee.x, ee.y);
    else ctx.lineTo(ee.x, ee.y);
  }
  ctx.stroke();
}

function circle(ctx: CanvasRenderingContext2D, p: { x: number; y: number },
                r: number, color: string, fill: boolean): void {
  ctx.beginPath();
  ctx.arc(p.x, p.y, r, 0, 2 * Math.PI);
  if (fill) {
    ctx.fillStyle = color;
    ctx.fill();
  } else {
    ctx.strokeStyle = color;
    ctx.lineWidth = 2;
    ctx.stroke();
  }
}

function drawObjects(ctx: CanvasRenderingContext2D, playback: Playback,
                     t: number, vp: Viewport): void {
  const obj = playback.object_states[t];
  const task = playback.task_id;
  if (task === "REACH3" || task === "REACH_MOVING3") {
    circle(ctx, worldToCanvas({ x: obj[0], y: obj[1] }, vp), 8, TARGET_COLOR, false);
    circle(ctx, worldToCanvas({ x: obj[0], y: obj[1] }, vp), 2, TARGET_COLOR, true);
  } else if (task === "PUSH3") {
    circle(ctx, worldToCanvas({ x: obj[0], y: obj[1] }, vp), 12, BLOCK_COLOR, true);
    circle(ctx, worldToCanvas({ x: obj[2], y: obj[3] }, vp), 8, TARGET_COLOR, false);
  } else if (task === "TRACE3") {
    circle(ctx, worldToCanvas({ x: obj[0], y: obj[1] }, vp), 8, TARGET_COLOR, false);
  }
}
