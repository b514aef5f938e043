/** Snapshot and structural tests for the pure HTML renderers. */

import { describe, expect, it } from "vitest";

import {
  escapeHtml,
  renderConfigForm,
  renderConversation,
  renderPersonaEditor,
  renderPersonaList,
  renderSendControls,
  renderTracePanels,
  renderTurn,
} from "../src/render.js";
import {
  messageResponseSchema,
  personaSchema,
  personaSummarySchema,
  sessionRecordSchema,
  type Trace,
} from "../src/schema.js";
import { loadFixture, TRACE_FIXTURES } from "./fixtures.js";

function fixtureTrace(name: string): Trace {
  return messageResponseSchema.parse(loadFixture(name)).trace;
}

function panelIds(html: string): string[] {
  return [...html.matchAll(/data-panel="([^"]+)"/g)].map((m) => m[1]!);
}

describe("trace panels", () => {
  it.each(TRACE_FIXTURES)("%s renders stable markup", (name) => {
    expect(renderTracePanels(fixtureTrace(name))).toMatchSnapshot();
  });

  it("renders one panel per stage that ran, in stage order", () => {
    expect(panelIds(renderTracePanels(fixtureTrace("trace_default")))).toEqual([
      "styleless",
      "memory",
      "stylize",
    ]);
    expect(
      panelIds(renderTracePanels(fixtureTrace("trace_summarized"))),
    ).toEqual(["styleless", "memory", "summarize", "stylize"]);
    expect(
      panelIds(renderTracePanels(fixtureTrace("trace_style_removed"))),
    ).toEqual(["styleless", "style_removal", "memory", "stylize"]);
  });

  it("omits the memory panel when memory checking is off", () => {
    const html = renderTracePanels(fixtureTrace("trace_memory_off"));
    expect(panelIds(html)).toEqual(["styleless", "stylize"]);
    expect(html).not.toContain('data-panel="memory"');
    expect(html).not.toContain('data-panel="summarize"');
  });

  it("flips panel order when style runs before memory", () => {
    expect(
      panelIds(renderTracePanels(fixtureTrace("trace_style_first"))),
    ).toEqual(["styleless", "stylize", "memory"]);
  });

  it("labels the stylize panel with the matching mode", () => {
    const trace = fixtureTrace("trace_default");
    expect(renderTracePanels(trace)).toContain(
      `Stylized (${trace.matching_mode})`,
    );
  });

  it("shows the persona prompt inside the styleless panel", () => {
    const trace = fixtureTrace("trace_default");
    const html = renderTracePanels(trace);
    expect(html).toContain("persona prompt");
    expect(html).toContain(escapeHtml(trace.persona_prompt));
  });
});

describe("conversation", () => {
  it("renders history in order with traces attached by id", () => {
    const session = sessionRecordSchema.parse(loadFixture("session"));
    const response = messageResponseSchema.parse(loadFixture("trace_default"));
    const traces = new Map([[response.trace_id, response.trace]]);
    const html = renderConversation(session.history, traces);
    expect(html).toMatchSnapshot();
    const users = session.history.map((h) => h.user);
    let cursor = -1;
    for (const user of users) {
      const at = html.indexOf(escapeHtml(user));
      expect(at).toBeGreaterThan(cursor);
      cursor = at;
    }
  });

  it("skips the stages expander when no trace is loaded", () => {
    const entry = { user: "hi", assistant: "hello", trace_id: "t1" };
    expect(renderTurn(entry, null)).not.toContain("show stages");
  });
});

describe("send controls", () => {
  it("enables input when idle", () => {
    const html = renderSendControls(false);
    expect(html).toMatchSnapshot();
    expect(html).not.toContain("disabled");
    expect(html).not.toContain("waiting for reply");
  });

  it("disables input and shows the indicator while a turn is in flight", () => {
    const html = renderSendControls(true);
    expect(html).toContain("disabled");
    expect(html).toContain("waiting for reply");
  });
});

describe("persona panels", () => {
  it("lists personas and marks the selected one", () => {
    const list = personaSummarySchema.array().parse(loadFixture("personas"));
    const html = renderPersonaList(list, list[0]!.slug);
    expect(html).toMatchSnapshot();
    expect(html).toContain("selected");
  });

  it("editor form carries every background field", () => {
    const persona = personaSchema.parse(loadFixture("persona"));
    const html = renderPersonaEditor(persona);
    expect(html).toMatchSnapshot();
    for (const key of Object.keys(persona.background)) {
      expect(html).toContain(`name="background.${key}"`);
    }
  });
});

describe("config form", () => {
  it("reflects the session config", () => {
    const session = sessionRecordSchema.parse(loadFixture("session"));
    const html = renderConfigForm(session.config);
    expect(html).toMatchSnapshot();
    expect(html).toContain('name="memory_check_enabled" checked');
    expect(html).toContain(`value="${session.config.matching_mode}" selected`);
  });
});

describe("escaping", () => {
  it("neutralizes markup in every dynamic string", () => {
    const hostile = `<script>alert("x")</script>&'`;
    const escaped = escapeHtml(hostile);
    expect(escaped).not.toMatch(/[<>"']/);
    const trace = fixtureTrace("trace_default");
    const html = renderTracePanels({ ...trace, styleless: hostile });
    expect(html).not.toContain("<script>");
  });
});
