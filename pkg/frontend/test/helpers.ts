// Test scaffolding: spawn real quarksd nodes and drive the Python CLI,
// so the browser-side code is exercised against the actual network.

import { execFile, spawn, ChildProcess } from "node:child_process";
import { createServer } from "node:net";
import { join } from "node:path";
import { promisify } from "node:util";

const execFileAsync = promisify(execFile);

export const PASSPHRASE = "webui-test-pw";
const REPO_ROOT = join(__dirname, "..", "..");

export interface TestNode {
  address: string;
  dataDir: string;
  proc: ChildProcess;
  stop(): Promise<void>;
}

export function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const server = createServer();
    server.listen(0, "127.0.0.1", () => {
      const address = server.address();
      if (address === null || typeof address === "string") {
        reject(new Error("no port"));
        return;
      }
      const port = address.port;
      server.close(() => resolve(port));
    });
  });
}

export async function waitFor(
  predicate: () => Promise<boolean> | boolean,
  timeoutMs = 10_000,
  intervalMs = 100,
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (await predicate()) return;
    await new Promise((r) => setTimeout(r, intervalMs));
  }
  throw new Error("condition not met within " + timeoutMs + "ms");
}

export async function startNode(dataDir: string): Promise<TestNode> {
  const port = await freePort();
  const address = `127.0.0.1:${port}`;
  const proc = spawn(
    "python3",
    ["-m", "quarks.node.daemon", "--address", address, "--data-dir", dataDir],
    { cwd: REPO_ROOT, stdio: ["ignore", "ignore", "inherit"] },
  );
  await waitFor(async () => {
    try {
      const resp = await fetch(`http://${address}/healthz`);
      return resp.status === 200;
    } catch {
      return false;
    }
  });
  return {
    address,
    dataDir,
    proc,
    stop: () =>
      new Promise<void>((resolve) => {
        proc.once("exit", () => resolve());
        proc.kill("SIGTERM");
        setTimeout(() => {
          proc.kill("SIGKILL");
          resolve();
        }, 5_000).unref();
      }),
  };
}

/** Run the quarks CLI with --json and parse its output. */
export async function cli(args: string[]): Promise<Record<string, unknown>> {
  try {
    const { stdout } = await execFileAsync(
      "python3",
      ["-m", "quarks.cli", "--json", ...args],
      {
        cwd: REPO_ROOT,
        env: { ...process.env, QUARKS_PASSPHRASE: PASSPHRASE },
      },
    );
    return JSON.parse(stdout.trim() || "{}");
  } catch (e) {
    const err = e as { stdout?: string; message?: string };
    if (err.stdout) {
      try {
        return JSON.parse(err.stdout.trim());
      } catch {
        /* fall through */
      }
    }
    throw e;
  }
}

/** Run short Python snippets (for oracle comparisons against the node's
 * own serialization and crypto). */
export async function python(code: string, stdin?: string): Promise<string> {
  const child = execFile("python3", ["-c", code], { cwd: REPO_ROOT });
  if (stdin !== undefined) {
    child.stdin?.write(stdin);
    child.stdin?.end();
  }
  let stdout = "";
  let stderr = "";
  child.stdout?.on("data", (d) => (stdout += d));
  child.stderr?.on("data", (d) => (stderr += d));
  await new Promise<void>((resolve, reject) => {
    child.on("exit", (code) =>
      code === 0 ? resolve() : reject(new Error(`python exited ${code}: ${stderr}`)),
    );
  });
  return stdout.trim();
}
