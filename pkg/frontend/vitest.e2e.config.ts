import { defineConfig } from "vitest/config";

// The e2e suite boots a real evaluation server (python) and drives the page
// modules against it, so it runs sequentially with generous timeouts.
export default defineConfig({
  test: {
    environment: "happy-dom",
    include: ["e2e/**/*.e2e.test.ts"],
    testTimeout: 120_000,
    hookTimeout: 120_000,
    fileParallelism: false,
  },
});
