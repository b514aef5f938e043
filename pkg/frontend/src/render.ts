/**
 * Pure HTML renderers for every view in the chat UI.
 *
 * Each function maps JSON from the API to a markup string and touches
 * no global state, so the snapshot tests exercise exactly what the
 * browser shows. All dynamic text passes through escapeHtml.
 */

import type {
  HistoryEntry,
  MemoryHit,
  Persona,
  PersonaSummary,
  PipelineConfig,
  Trace,
} from "./schema.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

function panel(id: string, title: string, body: string): string {
  return (
    `<section class="panel" data-panel="${id}">` +
    `<h3>${escapeHtml(title)}</h3>${body}</section>`
  );
}

function textBlock(text: string): string {
  return `<pre class="stage-text">${escapeHtml(text)}</pre>`;
}

function renderHit(hit: MemoryHit): string {
  return (
    `<li class="hit hit-${hit.kind}"><span class="hit-kind">${hit.kind}</span> ` +
    `${escapeHtml(hit.text)} <span class="hit-score">${hit.score.toFixed(3)}</span></li>`
  );
}

function stylelessPanel(trace: Trace): string {
  return panel(
    "styleless",
    "Styleless draft",
    `<details class="prompt"><summary>persona prompt</summary>` +
      textBlock(trace.persona_prompt) +
      `</details>` +
      textBlock(trace.styleless),
  );
}

function styleRemovalPanel(trace: Trace): string {
  if (trace.style_removed === undefined) return "";
  return panel("style_removal", "Style removed", textBlock(trace.style_removed));
}

function memoryPanel(trace: Trace): string {
  if (trace.memory_checked === undefined) return "";
  const keywords = (trace.rewrite_keywords ?? [])
    .map((k) => `<span class="keyword">${escapeHtml(k)}</span>`)
    .join(" ");
  const fallback = trace.keyword_fallback
    ? `<p class="note">keywords fell back to draft nouns</p>`
    : "";
  const hits = (trace.memory_hits ?? []).map(renderHit).join("");
  return panel(
    "memory",
    "Memory check",
    `<p class="keywords">${keywords}</p>${fallback}` +
      `<ul class="hits">${hits}</ul>` +
      textBlock(trace.memory_checked),
  );
}

function summaryPanel(trace: Trace): string {
  if (trace.summarized === undefined) return "";
  return panel("summarize", "Summarized", textBlock(trace.summarized));
}

function stylizePanel(trace: Trace): string {
  const rows = trace.per_segment
    .map(
      (p) =>
        `<tr><td>${p.position}</td><td>${p.exemplars.length}</td>` +
        `<td>${escapeHtml(p.rewritten)}</td></tr>`,
    )
    .join("");
  const table =
    rows === ""
      ? ""
      : `<table class="segments"><thead><tr><th>#</th><th>exemplars</th>` +
        `<th>rewritten</th></tr></thead><tbody>${rows}</tbody></table>`;
  return panel(
    "stylize",
    `Stylized (${trace.matching_mode})`,
    table + textBlock(trace.stylized),
  );
}

const STAGE_PANELS: Record<string, (trace: Trace) => string> = {
  styleless: stylelessPanel,
  style_removal: styleRemovalPanel,
  memory_check: memoryPanel,
  summarize: summaryPanel,
  stylize: stylizePanel,
};

/**
 * Stage panels for one turn, in the order the stages actually ran.
 * A panel appears iff its stage's keys exist in the trace.
 */
export function renderTracePanels(trace: Trace): string {
  const panels = trace.stage_order
    .map((stage) => STAGE_PANELS[stage]?.(trace) ?? "")
    .join("");
  const counts = Object.entries(trace.call_counts)
    .map(([tag, n]) => `${escapeHtml(tag)}: ${n}`)
    .join(", ");
  const notes = trace.notes.length
    ? `<ul class="notes">` +
      trace.notes.map((n) => `<li>${escapeHtml(n)}</li>`).join("") +
      `</ul>`
    : "";
  return (
    `<div class="trace">${panels}${notes}` +
    `<p class="call-counts">chat calls — ${counts}</p></div>`
  );
}

export function renderTurn(
  entry: HistoryEntry,
  panelsHtml: string | null,
): string {
  const stages =
    panelsHtml === null
      ? ""
      : `<details class="stages" data-trace-id="${escapeHtml(entry.trace_id)}">` +
        `<summary>show stages</summary>${panelsHtml}</details>`;
  return (
    `<article class="turn">` +
    `<p class="msg user">${escapeHtml(entry.user)}</p>` +
    `<p class="msg assistant">${escapeHtml(entry.assistant)}</p>` +
    `${stages}</article>`
  );
}

/** Conversation in history order; traces keyed by trace_id. */
export function renderConversation(
  history: HistoryEntry[],
  traces: Map<string, Trace>,
): string {
  return history
    .map((entry) => {
      const trace = traces.get(entry.trace_id);
      return renderTurn(entry, trace ? renderTracePanels(trace) : null);
    })
    .join("");
}

export function renderSendControls(pending: boolean): string {
  const indicator = pending
    ? `<span class="pending" role="status">waiting for reply…</span>`
    : "";
  return (
    `<form id="send-form">` +
    `<input id="send-text" type="text" autocomplete="off" ` +
    `placeholder="Say something" ${pending ? "disabled " : ""}/>` +
    `<button id="send-button" type="submit" ${pending ? "disabled " : ""}>` +
    `Send</button>${indicator}</form>`
  );
}

export function renderPersonaList(
  personas: PersonaSummary[],
  selectedSlug: string | null,
): string {
  const items = personas
    .map(
      (p) =>
        `<li><button class="persona-pick${p.slug === selectedSlug ? " selected" : ""}" ` +
        `data-slug="${escapeHtml(p.slug)}" data-name="${escapeHtml(p.name)}">` +
        `${escapeHtml(p.name)} <small>${p.utterance_count} lines` +
        `${p.has_memory ? ", memory" : ""}</small></button></li>`,
    )
    .join("");
  return `<ul class="personas">${items}</ul>`;
}

function configCheckbox(
  key: keyof PipelineConfig,
  label: string,
  checked: boolean,
): string {
  return (
    `<label><input type="checkbox" name="${key}" ${checked ? "checked " : ""}/>` +
    `${escapeHtml(label)}</label>`
  );
}

/**
 * Pipeline toggles. Applying them opens a new session, since a
 * session's config is fixed at creation.
 */
export function renderConfigForm(config: PipelineConfig): string {
  const modes = (["simple", "parallel", "dynamic"] as const)
    .map(
      (m) =>
        `<option value="${m}" ${m === config.matching_mode ? "selected " : ""}>` +
        `${m}</option>`,
    )
    .join("");
  return (
    `<form id="config-form">` +
    configCheckbox("memory_check_enabled", "memory check", config.memory_check_enabled) +
    configCheckbox("style_before_memory", "style before memory", config.style_before_memory) +
    configCheckbox("style_removal_enabled", "style removal", config.style_removal_enabled) +
    configCheckbox("summarize_after_memory", "summarize after memory", config.summarize_after_memory) +
    `<label>matching mode <select name="matching_mode">${modes}</select></label>` +
    `<button type="submit">Apply (new session)</button></form>`
  );
}

function backgroundRow(key: string, value: string): string {
  return (
    `<tr><td><label for="bg-${escapeHtml(key)}">${escapeHtml(key)}</label></td>` +
    `<td><input id="bg-${escapeHtml(key)}" name="background.${escapeHtml(key)}" ` +
    `value="${escapeHtml(value)}" /></td></tr>`
  );
}

export function renderPersonaEditor(persona: Persona): string {
  const rows = Object.entries(persona.background)
    .map(([key, value]) => backgroundRow(key, value))
    .join("");
  return (
    `<form id="persona-form" data-persona="${escapeHtml(persona.name)}">` +
    `<h2>${escapeHtml(persona.name)}</h2>` +
    `<label>personality<textarea name="personality">` +
    `${escapeHtml(persona.personality.synthesized)}</textarea></label>` +
    `<table class="background"><tbody>${rows}</tbody></table>` +
    `<label>style<textarea name="style_preferences">` +
    `${escapeHtml(persona.style_preferences)}</textarea></label>` +
    `<button type="submit">Save</button>` +
    `<button type="button" id="persona-revert">Revert</button>` +
    `<p class="persona-error" role="alert"></p></form>`
  );
}

export function renderError(code: string, message: string): string {
  return `<p class="error">${escapeHtml(code)}: ${escapeHtml(message)}</p>`;
}
