import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    environment: "node",
    // e2e spawns the Python service and drives real jobs
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
