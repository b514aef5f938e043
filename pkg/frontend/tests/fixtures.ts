/** Shared loader for the JSON fixtures exported from the service. */

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

export const FIXTURE_DIR = join(
  dirname(fileURLToPath(import.meta.url)),
  "..",
  "fixtures",
);

export function loadFixture(name: string): unknown {
  return JSON.parse(readFileSync(join(FIXTURE_DIR, `${name}.json`), "utf8"));
}

export const TRACE_FIXTURES = [
  "trace_default",
  "trace_memory_off",
  "trace_style_first",
  "trace_summarized",
  "trace_style_removed",
] as const;
