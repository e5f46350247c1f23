import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "jsdom",
    include: ["tests/**/*.test.ts"],
    // the round-trip suite boots a real service process
    hookTimeout: 60_000,
    testTimeout: 30_000,
  },
});
