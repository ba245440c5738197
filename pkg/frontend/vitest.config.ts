import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    testTimeout: 120_000,
    hookTimeout: 120_000,
    // native CLI calls are process-global; keep runs serial
    pool: "forks",
    poolOptions: { forks: { singleFork: true } },
  },
});
