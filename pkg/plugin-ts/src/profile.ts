/**
 * Simulated-sensor profiles: a profile fully determines the value stream,
 * so two instances given the same config emit the same readings.
 *
 * Parity note: `constant` and `ramp` use exact double arithmetic and are
 * byte-identical with the host's reference plugin once the host
 * canonicalizes the elements. `sine` and `seeded_noise` are deterministic
 * within this runtime but not bit-contracted across language runtimes.
 */

export const PROFILE_KINDS = ["constant", "ramp", "sine", "seeded_noise"] as const;
export const FAULT_MODES = ["wrong_type", "stall", "duplicate_timestamp"] as const;
export const CLOCK_MODES = ["wall", "logical"] as const;

export const LOGICAL_EPOCH_MS = 1_700_000_000_000;

/** Rejectable plugin-level error; crosses the wire as {"ok":false,...}. */
export class PluginFault extends Error {}

export interface SimProfile {
  kind: (typeof PROFILE_KINDS)[number];
  seed: number;
  periodMs: number;
  amplitude: number;
  offset: number;
  tickMs: number;
  faultMode: (typeof FAULT_MODES)[number] | null;
  clockMode: (typeof CLOCK_MODES)[number];
  stallMs: number;
}

function parseIntStrict(config: Record<string, string>, key: string,
                        fallback: number): number {
  const raw = config[key];
  if (raw === undefined) return fallback;
  if (!/^[+-]?\d+$/.test(raw.trim())) {
    throw new PluginFault(`config key ${key} must be an integer`);
  }
  return parseInt(raw, 10);
}

function parseFloatStrict(config: Record<string, string>, key: string,
                          fallback: number): number {
  const raw = config[key];
  if (raw === undefined) return fallback;
  const value = Number(raw.trim());
  if (raw.trim() === "" || Number.isNaN(value)) {
    throw new PluginFault(`config key ${key} must be a number`);
  }
  return value;
}

/** Parse the string map; "seed" is the one required key. */
export function profileFromConfig(config: Record<string, string>): SimProfile {
  if (!("seed" in config)) {
    throw new PluginFault("missing required config key: seed");
  }
  const kind = config["kind"] ?? "constant";
  if (!(PROFILE_KINDS as readonly string[]).includes(kind)) {
    throw new PluginFault(`unknown profile kind '${kind}'`);
  }
  const faultMode = config["fault_mode"] || null;
  if (faultMode !== null && !(FAULT_MODES as readonly string[]).includes(faultMode)) {
    throw new PluginFault(`unknown fault_mode '${faultMode}'`);
  }
  const clockMode = config["clock"] ?? "wall";
  if (clockMode === "host") {
    // the reference plugin offers a host-clock mode for in-process use;
    // a standalone process has no host clock to follow
    throw new PluginFault("clock=host is only available in-process");
  }
  if (!(CLOCK_MODES as readonly string[]).includes(clockMode)) {
    throw new PluginFault(`unknown clock '${clockMode}'`);
  }
  const periodMs = parseIntStrict(config, "period_ms", 60_000);
  const tickMs = parseIntStrict(config, "tick_ms", 1000);
  if (periodMs <= 0 || tickMs <= 0) {
    throw new PluginFault("period_ms and tick_ms must be positive");
  }
  return {
    kind: kind as SimProfile["kind"],
    seed: parseIntStrict(config, "seed", 0),
    periodMs,
    amplitude: parseFloatStrict(config, "amplitude", 1.0),
    offset: parseFloatStrict(config, "offset", 0.0),
    tickMs,
    faultMode: faultMode as SimProfile["faultMode"],
    clockMode: clockMode as SimProfile["clockMode"],
    stallMs: parseIntStrict(config, "stall_ms", 60_000),
  };
}

/** FNV-1a over the key, widened through splitmix32, mapped to [0, 1). */
export function seededUnit(key: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < key.length; i++) {
    h ^= key.charCodeAt(i);
    h = Math.imul(h, 0x01000193);
  }
  let z = (h >>> 0) + 0x9e3779b9;
  z = Math.imul(z ^ (z >>> 16), 0x21f0aaad);
  z = Math.imul(z ^ (z >>> 15), 0x735a2d97);
  z ^= z >>> 15;
  return (z >>> 0) / 4294967296;
}

/** Pure: the value this profile emits on its callIndex-th reading. */
export function simValue(p: SimProfile, callIndex: number): number {
  switch (p.kind) {
    case "constant":
      return p.offset;
    case "ramp":
      return p.offset + callIndex;
    case "sine": {
      const phase = (2 * Math.PI * (callIndex * p.tickMs)) / p.periodMs;
      return p.offset + p.amplitude * Math.sin(phase);
    }
    case "seeded_noise":
      // a fresh draw per call keeps the stream a pure function of
      // (seed, call_index), independent of call history
      return p.offset + p.amplitude * (2 * seededUnit(`${p.seed}:${callIndex}`) - 1);
  }
}
