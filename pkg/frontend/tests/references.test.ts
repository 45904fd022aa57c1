import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { loadReferencePage } from "../src/references.js";
import { FakeServer } from "./fakeserver.js";

describe("reference-accent page", () => {
  it("lists six categories with players for available samples", async () => {
    const server = new FakeServer([]);
    const items = await loadReferencePage(new ApiClient(server.fetch));
    expect(items).toHaveLength(6);
    const playable = items.filter((i) => i.audioUrl !== null);
    expect(playable).toHaveLength(5);
  });

  it("missing sample yields a placeholder warning", async () => {
    const server = new FakeServer([]);
    const items = await loadReferencePage(new ApiClient(server.fetch));
    const missing = items.find((i) => i.audioUrl === null);
    expect(missing?.category).toBe("Northern Irish");
    expect(missing?.warning).toMatch(/No reference sample/);
  });

  it("viewing references never touches session state", async () => {
    const server = new FakeServer(["s0001"]);
    const before = server.cursor;
    await loadReferencePage(new ApiClient(server.fetch));
    expect(server.cursor).toBe(before);
    expect(server.ratings).toHaveLength(0);
  });
});
