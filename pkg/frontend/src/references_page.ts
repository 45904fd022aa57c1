// Entry point for the optional accent-reference page.

import { ApiClient } from "./api.js";
import { loadReferencePage } from "./references.js";

export async function mountReferences(root: HTMLElement): Promise<void> {
  const api = new ApiClient((url, init) => fetch(url, init));
  const items = await loadReferencePage(api);
  root.appendChild(document.createElement("h1")).textContent =
    "Accent reference samples";
  for (const item of items) {
    const row = document.createElement("div");
    const label = document.createElement("strong");
    label.textContent = item.category;
    row.appendChild(label);
    if (item.audioUrl) {
      const audio = document.createElement("audio");
      audio.setAttribute("controls", "true");
      audio.setAttribute("src", item.audioUrl);
      row.appendChild(audio);
    } else {
      const warning = document.createElement("em");
      warning.textContent = ` ${item.warning}`;
      row.appendChild(warning);
    }
    root.appendChild(row);
  }
}

if (typeof document !== "undefined" && document.getElementById("references")) {
  void mountReferences(document.getElementById("references")!);
}
