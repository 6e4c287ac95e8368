import { defineConfig } from "vitest/config";

// Server-backed tests spawn a real `claw serve` process, so the timeouts
// cover process startup on a cold interpreter.
export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    testTimeout: 60_000,
    hookTimeout: 60_000,
  },
});
