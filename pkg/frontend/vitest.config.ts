import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    // the live test boots a real server process
    testTimeout: 30_000,
    hookTimeout: 45_000,
  },
});
