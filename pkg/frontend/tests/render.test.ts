import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { ConsoleController } from "../src/controller.js";
import { esc, renderApp, renderQueue } from "../src/render.js";
import { MockService, fixtureStatus } from "./mock.js";

async function polled(): Promise<{ mock: MockService; controller: ConsoleController }> {
  const mock = new MockService();
  const controller = new ConsoleController(new ApiClient("", mock.fetch));
  await controller.tick();
  return { mock, controller };
}

describe("queue rendering", () => {
  it("renders the three requests as rows ordered by id", async () => {
    const { controller } = await polled();
    const html = renderQueue(controller);
    const ids = [...html.matchAll(/<article class="request" data-id="(\d+)"/g)].map(
      (m) => Number(m[1]),
    );
    expect(ids).toEqual([2, 5, 11]);
  });

  it("shows answer, label, five predictions, and the evidence numbers", async () => {
    const { controller } = await polled();
    const html = renderQueue(controller);
    expect(html).toContain("rectangular");
    expect(html).toContain("sphere");
    expect((html.match(/<li>rectangle /g) ?? []).length).toBe(1);
    expect(html).toContain("61.0%");
    expect(html).toContain("spread logdet -3.410, loss 2.870");
    const row = html.slice(html.indexOf('data-id="2"'), html.indexOf('data-id="5"'));
    expect((row.match(/<li>/g) ?? []).length).toBe(5);
  });

  it("pre-fills the suggestion and offers accept only where one exists", async () => {
    const { controller } = await polled();
    const html = renderQueue(controller);
    const rowWith = html.slice(html.indexOf('data-id="2"'), html.indexOf('data-id="5"'));
    const rowWithout = html.slice(html.indexOf('data-id="5"'), html.indexOf('data-id="11"'));
    expect(rowWith).toContain("suggested: <strong>rectangle</strong>");
    expect(rowWith).toContain('<option value="rectangle" selected>');
    expect(rowWithout).not.toContain("data-action=\"accept\"");
    expect(rowWithout).toContain('<option value="" selected>pick a term…</option>');
  });

  it("populates the picker only with the instance's own-qtype canonical terms", async () => {
    const { controller } = await polled();
    const html = renderQueue(controller);
    const colorRow = html.slice(html.indexOf('data-id="5"'), html.indexOf('data-id="11"'));
    const offered = [...colorRow.matchAll(/<option value="([^"]*)"/g)].map((m) => m[1]);
    expect(offered).toEqual(["", "red", "green", "blue"]);
  });

  it("renders the empty state with a live epoch counter", async () => {
    const { mock, controller } = await polled();
    mock.pending = [];
    mock.status = fixtureStatus({ epoch: 7, phase: "training", suspended: false });
    await controller.tick();
    const html = renderQueue(controller);
    expect(html).toContain("no pending requests (epoch 7)");
    expect(html).not.toContain("article");
  });

  it("shows inline note and retry button only on failed rows", async () => {
    const { controller } = await polled();
    const item = controller.model.items.get(5)!;
    item.selectedTerm = "cube";
    await controller.replace(5); // 400: wrong category
    const html = renderQueue(controller);
    const colorRow = html.slice(html.indexOf('data-id="5"'), html.indexOf('data-id="11"'));
    expect(colorRow).toContain("cannot answer color");
    expect(colorRow).toContain('data-action="retry"');
    const shapeRow = html.slice(html.indexOf('data-id="2"'), html.indexOf('data-id="5"'));
    expect(shapeRow).not.toContain('data-action="retry"');
  });
});

describe("app chrome", () => {
  it("shows phase, pools, and the suspended badge", async () => {
    const { controller } = await polled();
    const html = renderApp(controller);
    expect(html).toContain("phase <strong>reannotation</strong>");
    expect(html).toContain("epoch <strong>3</strong>");
    expect(html).toContain("180 unlabeled / 117 labeled / 3 flagged");
    expect(html).toContain("suspended");
    expect(html).not.toContain("offline");
  });

  it("raises the offline banner after a failed poll", async () => {
    const { mock, controller } = await polled();
    mock.offline = true;
    await controller.tick();
    expect(renderApp(controller)).toContain("service unreachable; retrying");
  });

  it("surfaces notices and final metrics", async () => {
    const { mock, controller } = await polled();
    await controller.keep(2);
    mock.status = fixtureStatus({
      done: true,
      suspended: false,
      phase: "finished",
      final: { em1: 83.5, em1_annotation: 81.0 },
    });
    mock.pending = [];
    await controller.tick();
    const html = renderApp(controller);
    expect(html).toContain("keep recorded");
    expect(html).toContain("final:");
    expect(html).toContain("83.5");
  });

  it("escapes markup in server-provided text", () => {
    expect(esc('<b a="1">&\'')).toBe("&lt;b a=&quot;1&quot;&gt;&amp;&#39;");
  });
});
