import { ApiClient } from "./api.js";
import { RiskPanel } from "./panel.js";

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app mount point");
}

const api = new ApiClient(
  (window as unknown as { TTU_API_BASE?: string }).TTU_API_BASE ?? "",
);
const panel = new RiskPanel(root, api);

void panel.init();
window.setInterval(() => panel.tick(), 1000);
