// Spawns the real review service around the integration tests.
//
// The UI loop test exercises the client against the actual HTTP API, so this
// setup ingests a fixture dataset into a temp directory, starts the service
// on a free port, and tears it down afterwards.

import { ChildProcess, execFileSync, spawn } from 'child_process';
import { mkdtempSync, rmSync } from 'fs';
import { createServer } from 'net';
import { tmpdir } from 'os';
import { join, resolve } from 'path';

let server: ChildProcess | null = null;
let dataDir = '';

// vitest runs with cwd = frontend/; the fixtures live one level up.
const REPO_ROOT = resolve(process.cwd(), '..');
const FIXTURE = join(REPO_ROOT, 'fixtures', 'map_style.json');

function freePort(): Promise<number> {
  return new Promise((resolvePort, reject) => {
    const probe = createServer();
    probe.on('error', reject);
    probe.listen(0, '127.0.0.1', () => {
      const address = probe.address();
      const port = typeof address === 'object' && address ? address.port : 0;
      probe.close(() => resolvePort(port));
    });
  });
}

async function waitForHealth(url: string, timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${url}/api/health`);
      if (response.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error(`service at ${url} did not become healthy in ${timeoutMs}ms`);
}

export async function setup(): Promise<void> {
  dataDir = mkdtempSync(join(tmpdir(), 'qareview-ui-test-'));
  execFileSync('python3', ['-m', 'qareview.cli', '--data-dir', dataDir, 'ingest', FIXTURE], {
    stdio: 'inherit',
  });
  const port = await freePort();
  const url = `http://127.0.0.1:${port}`;
  server = spawn(
    'python3',
    ['-m', 'qareview.cli', '--data-dir', dataDir, 'serve', '--port', String(port)],
    { stdio: 'ignore' },
  );
  await waitForHealth(url);
  process.env.QAREVIEW_TEST_URL = url;
  process.env.QAREVIEW_TEST_DATA_DIR = dataDir;
}

export async function teardown(): Promise<void> {
  if (server && !server.killed) {
    server.kill('SIGTERM');
    await new Promise((r) => setTimeout(r, 300));
    if (!server.killed) server.kill('SIGKILL');
  }
  if (dataDir) rmSync(dataDir, { recursive: true, force: true });
}
