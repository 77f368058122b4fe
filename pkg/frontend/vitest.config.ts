import { defineConfig } from "vitest/config";

// Generous timeouts: the integration suite boots the real python service
// (torch import alone takes several seconds) and exercises reconnect backoff.
export default defineConfig({
  test: {
    environment: "node",
    testTimeout: 30_000,
    hookTimeout: 120_000,
  },
});
