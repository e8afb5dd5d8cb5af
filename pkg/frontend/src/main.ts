/** DOM entry point: wires the file input and banner to the controllers. */

import { HealthMonitor, UploadController } from "./app.js";
import { loadConfig } from "./config.js";
import { renderApp, renderHealthBanner } from "./view.js";

const cfg = loadConfig();
const bannerHost = document.getElementById("banner") as HTMLElement;
const appHost = document.getElementById("app") as HTMLElement;
const input = document.getElementById("file-input") as HTMLInputElement;
const submitButton = document.getElementById("submit") as HTMLButtonElement;

const controller = new UploadController(cfg, (state) => {
  appHost.innerHTML = renderApp(state);
  submitButton.disabled = state.phase === "uploading";
  const retry = appHost.querySelector<HTMLButtonElement>("[data-action=retry]");
  if (retry) {
    retry.addEventListener("click", () => controller.reset());
  }
});

submitButton.addEventListener("click", () => {
  const file = input.files?.[0];
  if (!file) return;
  void controller.submit({ name: file.name, size: file.size, blob: file });
});

const monitor = new HealthMonitor(cfg);

async function refreshBanner(): Promise<void> {
  const status = await monitor.poll();
  bannerHost.innerHTML = renderHealthBanner(status.kind, status.health);
}

void refreshBanner();
setInterval(() => void refreshBanner(), cfg.healthPollIntervalMs);

controller.reset();
