/**
 * Round trip against a real server running the scripted demo persona.
 *
 * The server replays canned model outputs, so replies are
 * deterministic and comparable to the checked-in fixtures while the
 * HTTP layer, storage, and pipeline all run for real.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { createServer } from "node:net";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiError, RolecraftClient } from "../src/api.js";
import {
  messageResponseSchema,
  personaSchema,
  sessionRecordSchema,
  traceRecordSchema,
} from "../src/schema.js";
import { loadFixture } from "./fixtures.js";

const SERVE_SCRIPT = join(
  dirname(fileURLToPath(import.meta.url)),
  "..",
  "..",
  "scripts",
  "serve_demo.py",
);

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = createServer();
    probe.once("error", reject);
    probe.listen(0, "127.0.0.1", () => {
      const address = probe.address();
      if (address === null || typeof address === "string") {
        reject(new Error("no port assigned"));
        return;
      }
      probe.close(() => resolve(address.port));
    });
  });
}

async function waitForHealth(
  client: RolecraftClient,
  deadlineMs: number,
): Promise<void> {
  const start = Date.now();
  for (;;) {
    try {
      await client.health();
      return;
    } catch {
      if (Date.now() - start > deadlineMs) {
        throw new Error("server did not become healthy in time");
      }
      await new Promise((r) => setTimeout(r, 250));
    }
  }
}

const golden = messageResponseSchema.parse(loadFixture("trace_default"));

let server: ChildProcess;
let client: RolecraftClient;

beforeAll(async () => {
  const port = await freePort();
  server = spawn("python3", [SERVE_SCRIPT, String(port)], {
    stdio: ["ignore", "pipe", "pipe"],
  });
  client = new RolecraftClient(`http://127.0.0.1:${port}`);
  await waitForHealth(client, 30_000);
}, 40_000);

afterAll(() => {
  server?.kill("SIGTERM");
});

describe("live server round trip", () => {
  let sessionId: string;

  it("lists the demo persona with a valid payload", async () => {
    const personas = await client.listPersonas();
    expect(personas.map((p) => p.slug)).toContain("albus_dumbledore");
    const persona = personaSchema.parse(
      await client.getPersona(personas[0]!.name),
    );
    expect(persona.has_memory).toBe(true);
  });

  it("opens a session and completes a turn in under two seconds", async () => {
    const session = sessionRecordSchema.parse(
      await client.createSession("Albus Dumbledore"),
    );
    sessionId = session.session_id;

    const start = Date.now();
    const response = await client.postMessage(
      sessionId,
      golden.trace.user_message,
    );
    const elapsed = Date.now() - start;
    expect(elapsed).toBeLessThan(2000);

    const parsed = messageResponseSchema.parse(response);
    expect(parsed.reply).toBe(golden.reply);
    expect(parsed.trace.styleless).toBe(golden.trace.styleless);
    expect(parsed.trace.memory_checked).toBe(golden.trace.memory_checked);
    expect(parsed.trace.stylized).toBe(golden.trace.stylized);
  });

  it("stores the turn in the session and serves the trace back", async () => {
    const session = sessionRecordSchema.parse(
      await client.getSession(sessionId),
    );
    expect(session.history).toHaveLength(1);
    const record = traceRecordSchema.parse(
      await client.getTrace(session.history[0]!.trace_id),
    );
    expect(record.trace.reply).toBe(golden.reply);
  });

  it("reflects a persona edit in the next turn's trace", async () => {
    const persona = await client.getPersona("Albus Dumbledore");
    const edited = personaSchema.parse(
      await client.putPersona(persona.name, {
        background: { age: "one hundred and fifteen" },
      }),
    );
    expect(edited.background.age).toBe("one hundred and fifteen");

    const response = await client.postMessage(
      sessionId,
      golden.trace.user_message,
    );
    expect(response.trace.persona_prompt).toContain("one hundred and fifteen");
    expect(golden.trace.persona_prompt).not.toContain(
      "one hundred and fifteen",
    );
  });

  it("rejects a blank message with the error contract", async () => {
    await expect(client.postMessage(sessionId, "   ")).rejects.toMatchObject({
      code: "config",
      status: 400,
    });
    await expect(client.postMessage(sessionId, "   ")).rejects.toBeInstanceOf(
      ApiError,
    );
  });
});
