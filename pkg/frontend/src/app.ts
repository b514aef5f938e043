/**
 * Stateful controller: owns the session, wires DOM events, and
 * re-renders regions through the pure functions in render.ts.
 *
 * One turn is in flight per session at most; the send controls are
 * disabled until the reply arrives. Config changes open a new session
 * because a session's pipeline config is fixed at creation.
 */

import { ApiError, RolecraftClient } from "./api.js";
import type {
  HistoryEntry,
  Persona,
  PersonaSummary,
  PipelineConfig,
  Trace,
} from "./schema.js";
import {
  renderConfigForm,
  renderConversation,
  renderError,
  renderPersonaEditor,
  renderPersonaList,
  renderSendControls,
} from "./render.js";

const DEFAULT_CONFIG: PipelineConfig = {
  memory_check_enabled: true,
  style_before_memory: false,
  style_removal_enabled: false,
  summarize_after_memory: false,
  matching_mode: "dynamic",
  exemplar_k: 5,
  memory_k: 8,
  max_response_sentences: null,
};

interface Regions {
  personas: HTMLElement;
  conversation: HTMLElement;
  send: HTMLElement;
  config: HTMLElement;
  editor: HTMLElement;
  status: HTMLElement;
}

export class ChatApp {
  private personas: PersonaSummary[] = [];
  private persona: Persona | null = null;
  private sessionId: string | null = null;
  private config: PipelineConfig = { ...DEFAULT_CONFIG };
  private history: HistoryEntry[] = [];
  private traces = new Map<string, Trace>();
  private pending = false;

  constructor(
    private readonly client: RolecraftClient,
    private readonly regions: Regions,
  ) {}

  async start(): Promise<void> {
    this.bind();
    this.drawSend();
    try {
      this.personas = await this.client.listPersonas();
      this.drawPersonas();
      if (this.personas.length > 0) {
        await this.selectPersona(this.personas[0]!.name);
      }
    } catch (err) {
      this.showError(err);
    }
  }

  private bind(): void {
    this.regions.personas.addEventListener("click", (event) => {
      const button = (event.target as HTMLElement).closest<HTMLElement>(
        ".persona-pick",
      );
      if (button?.dataset.name) void this.selectPersona(button.dataset.name);
    });
    this.regions.send.addEventListener("submit", (event) => {
      event.preventDefault();
      const input =
        this.regions.send.querySelector<HTMLInputElement>("#send-text");
      if (input) void this.send(input.value);
    });
    this.regions.config.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.applyConfig(event.target as HTMLFormElement);
    });
    this.regions.editor.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.savePersona(event.target as HTMLFormElement);
    });
    this.regions.editor.addEventListener("click", (event) => {
      if ((event.target as HTMLElement).id === "persona-revert") {
        this.drawEditor();
      }
    });
  }

  private async selectPersona(name: string): Promise<void> {
    try {
      this.persona = await this.client.getPersona(name);
      // sessions with memory checking need the persona's memory graph
      if (!this.persona.has_memory) this.config.memory_check_enabled = false;
      await this.openSession();
      this.drawPersonas();
      this.drawEditor();
      this.drawConfig();
    } catch (err) {
      this.showError(err);
    }
  }

  private async openSession(): Promise<void> {
    if (!this.persona) return;
    const record = await this.client.createSession(
      this.persona.name,
      this.config,
    );
    this.sessionId = record.session_id;
    this.config = record.config;
    this.history = [];
    this.traces.clear();
    this.drawConversation();
    this.setStatus(`session ${record.session_id} with ${record.persona}`);
  }

  private async send(text: string): Promise<void> {
    if (this.pending || !this.sessionId) return;
    if (!text.trim()) {
      this.setStatus("type a message first");
      return;
    }
    this.pending = true;
    this.drawSend();
    try {
      const response = await this.client.postMessage(this.sessionId, text);
      this.traces.set(response.trace_id, response.trace);
      this.history.push({
        user: text,
        assistant: response.reply,
        trace_id: response.trace_id,
      });
      this.drawConversation();
      this.setStatus("");
    } catch (err) {
      this.showError(err);
    } finally {
      this.pending = false;
      this.drawSend();
    }
  }

  private async applyConfig(form: HTMLFormElement): Promise<void> {
    const data = new FormData(form);
    this.config = {
      ...this.config,
      memory_check_enabled: data.has("memory_check_enabled"),
      style_before_memory: data.has("style_before_memory"),
      style_removal_enabled: data.has("style_removal_enabled"),
      summarize_after_memory: data.has("summarize_after_memory"),
      matching_mode: (data.get("matching_mode") ??
        this.config.matching_mode) as PipelineConfig["matching_mode"],
    };
    try {
      await this.openSession();
      this.drawConfig();
    } catch (err) {
      this.showError(err);
    }
  }

  private async savePersona(form: HTMLFormElement): Promise<void> {
    if (!this.persona) return;
    const data = new FormData(form);
    const background: Record<string, string> = {};
    for (const [key, value] of data.entries()) {
      if (key.startsWith("background.")) {
        background[key.slice("background.".length)] = String(value);
      }
    }
    const edit: Partial<Persona> = {
      personality: {
        synthesized: String(data.get("personality") ?? ""),
        per_chunk_traits: this.persona.personality.per_chunk_traits,
      },
      background,
      style_preferences: String(data.get("style_preferences") ?? ""),
    };
    const errorBox = form.querySelector<HTMLElement>(".persona-error");
    try {
      this.persona = await this.client.putPersona(this.persona.name, edit);
      if (errorBox) errorBox.textContent = "";
      this.setStatus("persona saved; next turn uses the new profile");
    } catch (err) {
      if (errorBox && err instanceof ApiError) {
        errorBox.textContent = `${err.code}: ${err.message}`;
      } else {
        this.showError(err);
      }
    }
  }

  private drawPersonas(): void {
    this.regions.personas.innerHTML = renderPersonaList(
      this.personas,
      this.persona?.slug ?? null,
    );
  }

  private drawConversation(): void {
    this.regions.conversation.innerHTML = renderConversation(
      this.history,
      this.traces,
    );
    this.regions.conversation.scrollTop =
      this.regions.conversation.scrollHeight;
  }

  private drawSend(): void {
    this.regions.send.innerHTML = renderSendControls(this.pending);
  }

  private drawConfig(): void {
    this.regions.config.innerHTML = renderConfigForm(this.config);
  }

  private drawEditor(): void {
    if (this.persona) {
      this.regions.editor.innerHTML = renderPersonaEditor(this.persona);
    }
  }

  private setStatus(text: string): void {
    this.regions.status.textContent = text;
  }

  private showError(err: unknown): void {
    if (err instanceof ApiError) {
      this.regions.status.innerHTML = renderError(err.code, err.message);
    } else {
      this.regions.status.innerHTML = renderError("internal", String(err));
    }
  }
}
