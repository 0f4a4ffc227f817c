import { defineConfig } from "vitest/config";

export default defineConfig({
  server: { port: 5173 },
  build: { target: "es2022" },
  test: {
    globalSetup: ["tests/setup/service.ts"],
    testTimeout: 120_000,
    hookTimeout: 180_000,
    pool: "forks",
  },
});
