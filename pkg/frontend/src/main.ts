/** Entry point: build the view, render the active query, loop until done. */

import { ApiClient } from "./api.js";
import { AnnotationView } from "./state.js";
import {
  bindHotkeys,
  Elements,
  renderContext,
  renderCrop,
  renderPalette,
  renderProgress,
} from "./ui.js";

function grab(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el;
}

async function refresh(view: AnnotationView, client: ApiClient, els: Elements) {
  renderProgress(view, els);
  const q = view.current;
  if (!q) {
    els.status.textContent = view.roundComplete
      ? "All queries answered. Advance the round when ready."
      : "No open queries.";
    return;
  }
  els.status.textContent = `query ${q.query_id}: ${q.image_id} (${q.row}, ${q.col})`;
  renderCrop(els.crop, q);
  renderContext(els.context, client.imageUrl(q.image_id), q);
}

async function boot() {
  const client = new ApiClient("");
  const view = new AnnotationView(client);
  const els: Elements = {
    crop: grab("crop") as HTMLCanvasElement,
    context: grab("context") as HTMLCanvasElement,
    palette: grab("palette"),
    progress: grab("progress"),
    status: grab("status"),
    advance: grab("advance") as HTMLButtonElement,
  };

  const pick = async (classId: number) => {
    const out = await view.submit(classId);
    if (out.kind === "retry") {
      els.status.textContent = `submit failed (${out.reason}); press again to retry`;
    } else if (out.kind === "rejected") {
      els.status.textContent = `rejected: ${out.reason}`;
    }
    await refresh(view, client, els);
  };

  els.advance.addEventListener("click", async () => {
    try {
      await view.advanceRound();
    } catch (err) {
      els.status.textContent = `advance failed: ${err}`;
    }
    renderPalette(els.palette, view.classNames(), pick);
    await refresh(view, client, els);
  });

  await view.load();
  renderPalette(els.palette, view.classNames(), pick);
  bindHotkeys(view, pick);
  await refresh(view, client, els);
}

boot().catch((err) => {
  const el = document.getElementById("status");
  if (el) el.textContent = `failed to load session: ${err}`;
});
