/** Browser wiring: render into #app, delegate events, poll on a timer. */

import { ApiClient } from "./api.js";
import { ConsoleController } from "./controller.js";
import { renderApp } from "./render.js";

// same-origin by default; ?api=http://host:port points elsewhere
const base = new URLSearchParams(window.location.search).get("api") ?? "";
const controller = new ConsoleController(new ApiClient(base));

const root = document.querySelector("#app");
if (!(root instanceof HTMLElement)) throw new Error("missing #app container");
const mount = root;

function redraw(): void {
  mount.innerHTML = renderApp(controller);
}

mount.addEventListener("click", (event) => {
  const button = (event.target as HTMLElement).closest("button[data-action]");
  if (!(button instanceof HTMLButtonElement)) return;
  const id = Number(button.dataset.id);
  const actions: Record<string, (() => Promise<void>) | undefined> = {
    keep: () => controller.keep(id),
    accept: () => controller.acceptSuggestion(id),
    replace: () => controller.replace(id),
    retry: () => controller.retry(id),
  };
  const run = actions[button.dataset.action ?? ""];
  if (run) void run().then(redraw);
});

mount.addEventListener("change", (event) => {
  const select = event.target;
  if (!(select instanceof HTMLSelectElement) || select.dataset.id === undefined) return;
  const item = controller.model.items.get(Number(select.dataset.id));
  if (item) item.selectedTerm = select.value;
});

async function loop(): Promise<void> {
  await controller.tick();
  redraw();
  window.setTimeout(() => void loop(), controller.nextDelay());
}

void loop();
