// Bootstrap: wire the session controller to the two canvases, the buttons,
// and the keyboard shortcuts.

import { LabelApi } from "./api.js";
import { SessionController } from "./controller.js";
import { renderFrame, Viewport } from "./render.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function boot(): Promise<void> {
  const api = new LabelApi("");
  const labelerId =
    new URLSearchParams(window.location.search).get("labeler") ?? "anonymous";
  const controller = new SessionController(api, labelerId);

  const leftCanvas = el<HTMLCanvasElement>("left-canvas");
  const rightCanvas = el<HTMLCanvasElement>("right-canvas");
  const status = el<HTMLDivElement>("status");
  const tally = el<HTMLDivElement>("tally");
  const buttons = {
    LEFT: el<HTMLButtonElement>("btn-left"),
    NOT_SURE: el<HTMLButtonElement>("btn-notsure"),
    RIGHT: el<HTMLButtonElement>("btn-right"),
  };
  const replayBtn = el<HTMLButtonElement>("btn-replay");
  const speed = el<HTMLInputElement>("speed");
  const vp: Viewport = { width: leftCanvas.width, height: leftCanvas.height, scale: 70 };

  buttons.LEFT.addEventListener("click", () => controller.submit("LEFT"));
  buttons.RIGHT.addEventListener("click", () => controller.submit("RIGHT"));
  buttons.NOT_SURE.addEventListener("click", () => controller.submit("NOT_SURE"));
  replayBtn.addEventListener("click", () => controller.replay());
  speed.addEventListener("input", () => {
    controller.view.playback?.setSpeed(parseFloat(speed.value));
  });
  window.addEventListener("keydown", (ev) => {
    if (["ArrowLeft", "ArrowRight", " ", "r"].includes(ev.key)) {
      ev.preventDefault();
      void controller.handleKey(ev.key);
    }
  });

  await controller.start();

  let last = performance.now();
  async function refreshTally(): Promise<void> {
    try {
      const stats = await api.stats();
      tally.textContent =
        `you: ${stats.by_labeler[labelerId] ?? 0} | total: ${stats.completed}`
        + ` | pending: ${stats.pending}`;
    } catch {
      tally.textContent = "";
    }
  }
  void refreshTally();
  setInterval(refreshTally, 5000);

  function loop(now: number): void {
    const dt = (now - last) / 1000;
    last = now;
    const view = controller.view;
    if (view.phase === "reviewing" && view.pair && view.playback) {
      const frame = view.playback.tick(dt);
      const lctx = leftCanvas.getContext("2d");
      const rctx = rightCanvas.getContext("2d");
      if (lctx && rctx) {
        renderFrame(lctx, view.pair.left, frame, vp);
        renderFrame(rctx, view.pair.right, frame, vp);
      }
      status.textContent = view.playback.completedOnce
        ? "pick the more natural motion (← left, → right, space = not sure, r = replay)"
        : "watch both playbacks…";
    } else if (view.phase === "done") {
      status.textContent = view.message;
    } else if (view.phase === "error") {
      status.textContent = view.message;
    }
    const enabled = controller.canSubmit;
    for (const b of Object.values(buttons)) b.disabled = !enabled;
    requestAnimationFrame(loop);
  }
  requestAnimationFrame(loop);
}

void boot();
