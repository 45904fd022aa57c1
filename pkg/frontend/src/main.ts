// DOM wiring for the listener page. All state is held by SessionController;
// this file only renders and forwards events.

import { ApiClient } from "./api.js";
import { DIALECT_CHOICES, MOS_SCALE } from "./form.js";
import { AudioPlayer, SessionController } from "./session.js";

class HtmlAudioPlayer implements AudioPlayer {
  play(url: string): Promise<void> {
    return new Promise((resolve, reject) => {
      const audio = new Audio(url);
      audio.addEventListener("ended", () => resolve());
      audio.addEventListener("error", () => reject(new Error(`cannot play ${url}`)));
      void audio.play().catch(reject);
    });
  }
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) {
    node.setAttribute(k, v);
  }
  if (text) {
    node.textContent = text;
  }
  return node;
}

function scaleButtons(
  label: string,
  onPick: (v: number) => void,
): { root: HTMLElement; clear: () => void } {
  const root = el("div", { class: "scale" });
  root.appendChild(el("span", {}, label));
  const buttons: HTMLButtonElement[] = [];
  for (const v of MOS_SCALE) {
    const b = el("button", { type: "button" }, String(v));
    b.addEventListener("click", () => {
      buttons.forEach((x) => x.classList.remove("picked"));
      b.classList.add("picked");
      onPick(v);
    });
    buttons.push(b);
    root.appendChild(b);
  }
  return { root, clear: () => buttons.forEach((x) => x.classList.remove("picked")) };
}

export function mountApp(root: HTMLElement): void {
  const api = new ApiClient((url, init) => fetch(url, init));
  const status = el("p", { id: "status" }, "Enter your listener id to begin.");
  const progress = el("p", { id: "progress" });
  const loginRow = el("div", { id: "login" });
  const idInput = el("input", { placeholder: "listener id (e.g. L001)" });
  const startBtn = el("button", {}, "Start");
  loginRow.append(idInput, startBtn);

  const panel = el("div", { id: "panel", style: "display:none" });
  const playBtn = el("button", {}, "Play sample");
  const refBtn = el("button", {}, "Play reference (for similarity)");
  const submitBtn = el("button", { disabled: "true" }, "Submit rating");
  const refsLink = el("a", { href: "/references.html", target: "_blank" },
    "Accent reference page");

  const controller = new SessionController(api, new HtmlAudioPlayer(), {
    showStimulus: () => {
      status.textContent = "Listen to the sample, then rate it.";
      mosScale.clear();
      dmosScale.clear();
      dialectSelect.value = "";
      refresh();
    },
    showProgress: (index, total) => {
      progress.textContent = `Sample ${index + 1} of ${total}`;
    },
    showDone: () => {
      panel.style.display = "none";
      status.textContent = "All sets complete. Thank you!";
      progress.textContent = "";
    },
    showError: (message) => {
      status.textContent = `Error: ${message}`;
    },
  });

  const refresh = () => {
    submitBtn.disabled = !controller.canSubmit;
  };

  const mosScale = scaleButtons("Naturalness (1-5): ", (v) => {
    controller.form.setMos(v);
    refresh();
  });
  const dmosScale = scaleButtons("Similarity to reference (1-5): ", (v) => {
    controller.form.setDmos(v);
    refresh();
  });

  const dialectRow = el("div", { class: "scale" });
  dialectRow.appendChild(el("span", {}, "Accent: "));
  const dialectSelect = el("select");
  dialectSelect.appendChild(el("option", { value: "" }, "choose..."));
  for (const d of DIALECT_CHOICES) {
    dialectSelect.appendChild(el("option", { value: d }, d));
  }
  dialectSelect.addEventListener("change", () => {
    if (dialectSelect.value) {
      controller.form.setDialect(dialectSelect.value);
    }
    refresh();
  });
  dialectRow.appendChild(dialectSelect);

  playBtn.addEventListener("click", () => {
    void controller.playStimulus().then(refresh).catch((e) => {
      status.textContent = `Error: ${(e as Error).message}`;
    });
  });
  refBtn.addEventListener("click", () => {
    void controller.playReference().catch((e) => {
      status.textContent = `Error: ${(e as Error).message}`;
    });
  });
  submitBtn.addEventListener("click", () => {
    void controller.submit().then(refresh).catch((e) => {
      status.textContent = `Error: ${(e as Error).message}`;
    });
  });
  startBtn.addEventListener("click", () => {
    const listener = idInput.value.trim();
    if (!listener) {
      return;
    }
    window.localStorage.setItem("listener_id", listener);
    void controller.start(listener).then(() => {
      loginRow.style.display = "none";
      if (!controller.done) {
        panel.style.display = "block";
      }
    }).catch((e) => {
      status.textContent = `Error: ${(e as Error).message}`;
    });
  });

  panel.append(playBtn, refBtn, mosScale.root, dmosScale.root, dialectRow,
    submitBtn, el("div", {}), refsLink);
  root.append(el("h1", {}, "Listening test"), status, progress, loginRow, panel);

  // resume a previous session on reload: the server holds the cursor
  const saved = window.localStorage.getItem("listener_id");
  if (saved) {
    idInput.value = saved;
  }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  mountApp(document.getElementById("app")!);
}
