import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    include: ['tests/**/*.test.ts'],
    testTimeout: 60_000,
    hookTimeout: 60_000,
    // python subprocesses back most tests; keep them off each other's ports
    pool: 'forks',
  },
});
