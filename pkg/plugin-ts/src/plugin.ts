/**
 * Stdio plugin process: line-delimited JSON over stdin/stdout, one request
 * in flight at a time.
 *
 * The first stdout line is the handshake; every request gets exactly one
 * `{"ok":true,"result":...}` or `{"ok":false,"error":"..."}` reply. Lines
 * are written with an explicit trailing newline and no buffering layer on
 * top of the pipe, so the host never waits on a flushed-but-unsent reply.
 */

import { createInterface } from "node:readline";
import { pathToFileURL } from "node:url";
import {
  LOGICAL_EPOCH_MS,
  PluginFault,
  profileFromConfig,
  simValue,
  type SimProfile,
} from "./profile.js";

const PROTOCOL_VERSION = "mosden-plugin/1";
const PLUGIN_ID = "mosden.sim-ts";
const VERSION = "1.0.0";

const SCHEMA = [{ name: "temp", value_type: "double", unit: "celsius" }];

type Reading = { timestamp: number; values: Record<string, unknown> };

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export class SimProgram {
  private profile: SimProfile | null = null;
  private callIndex = 0;
  private lastTs: number | null = null;

  setConfiguration(config: unknown): null {
    if (config === null || typeof config !== "object" || Array.isArray(config)) {
      throw new PluginFault("bad_request: config must be an object");
    }
    for (const value of Object.values(config)) {
      if (typeof value !== "string") {
        throw new PluginFault("config must map strings to strings");
      }
    }
    this.profile = profileFromConfig(config as Record<string, string>);
    this.callIndex = 0;
    this.lastTs = null;
    return null;
  }

  getDataStructure(): typeof SCHEMA {
    if (this.profile === null) throw new PluginFault("not configured");
    return SCHEMA;
  }

  async getReadings(): Promise<Reading> {
    const p = this.profile;
    if (p === null) throw new PluginFault("not configured");
    const i = this.callIndex;
    this.callIndex += 1;
    if (p.faultMode === "stall") await sleep(p.stallMs);
    let ts = p.clockMode === "logical"
      ? LOGICAL_EPOCH_MS + i * p.tickMs
      : Date.now();
    if (p.faultMode === "duplicate_timestamp" && i % 2 === 1 && this.lastTs !== null) {
      // re-serve a stale timestamp, one tick older than the last reading,
      // the way a cached sensor read would; the host's store rejects it
      ts = this.lastTs - p.tickMs;
    } else {
      this.lastTs = ts;
    }
    if (p.faultMode === "wrong_type") {
      return { timestamp: ts, values: { temp: "not-a-number" } };
    }
    return { timestamp: ts, values: { temp: simValue(p, i) } };
  }
}

function writeLine(obj: unknown): void {
  process.stdout.write(JSON.stringify(obj) + "\n");
}

async function dispatch(program: SimProgram, request: unknown): Promise<unknown> {
  if (request === null || typeof request !== "object" || !("op" in request)) {
    return { ok: false, error: 'bad_request: expected {"op":...}' };
  }
  const op = (request as { op: unknown }).op;
  if (op === "set_configuration") {
    program.setConfiguration((request as { config?: unknown }).config);
    return { ok: true, result: null };
  }
  if (op === "get_data_structure") {
    return { ok: true, result: program.getDataStructure() };
  }
  if (op === "get_readings") {
    return { ok: true, result: await program.getReadings() };
  }
  return { ok: false, error: `unknown_op: ${String(op)}` };
}

export async function serve(pluginId: string = PLUGIN_ID): Promise<void> {
  writeLine({ protocol: PROTOCOL_VERSION, plugin_id: pluginId, version: VERSION });
  const program = new SimProgram();
  const lines = createInterface({ input: process.stdin });
  for await (const raw of lines) {
    const line = raw.trim();
    if (!line) continue;
    let reply: unknown;
    try {
      reply = await dispatch(program, JSON.parse(line));
    } catch (err) {
      reply = err instanceof PluginFault
        ? { ok: false, error: err.message }
        : { ok: false, error: `internal: ${String(err)}` };
    }
    writeLine(reply);
  }
}

const invokedDirectly = process.argv[1] !== undefined
  && import.meta.url === pathToFileURL(process.argv[1]).href;

if (invokedDirectly) {
  // optional argv override mirrors the reference entry point: one binary
  // can back several manifests
  serve(process.argv[2] ?? PLUGIN_ID).then(
    () => process.exit(0),
    (err) => {
      process.stderr.write(`fatal: ${String(err)}\n`);
      process.exit(1);
    },
  );
}
