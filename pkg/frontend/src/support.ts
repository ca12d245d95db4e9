/**
 * Browser-side runtime for generated security-monitor service workers.
 *
 * Carrier codecs (query-string, form body, JSON body, path segments,
 * header and cookie pairs), a persistent table shim keyed per worker
 * registration, and the blocked-response builder. The codec behavior is
 * pinned byte-for-byte against the proxy-side implementation by the
 * shared conformance corpus (`conformance/codec-conformance.json`).
 *
 * Lookups fail closed: a storage error surfaces as a thrown
 * StorageUnavailable, which the generated worker turns into a blocked
 * response.
 */

export type Carrier =
  | "query-string"
  | "form-body"
  | "json-body"
  | "path-segment"
  | "header"
  | "cookie";

export type Transform = "string" | "url" | "integer";

export interface CodecSpec {
  carrier: Carrier;
  fields: [string, Transform][];
}

export interface ParsedUrl {
  scheme: string;
  host: string;
  path: string;
  query: string;
  href: string;
}

export interface StorageDriver {
  load(): Promise<Record<string, string[][]>>;
  save(tables: Record<string, string[][]>): Promise<void>;
}

export class CodecError extends Error {}

export class StorageUnavailable extends Error {}

/** Percent-encode exactly like the proxy side (every reserved byte). */
function enc(value: string): string {
  return encodeURIComponent(value).replace(
    /[!'()*]/g,
    (c) => "%" + c.charCodeAt(0).toString(16).toUpperCase(),
  );
}

function dec(value: string): string {
  try {
    return decodeURIComponent(value);
  } catch {
    throw new CodecError(`malformed percent encoding in \`${value}\``);
  }
}

export function serializeCarrier(kind: Carrier, items: [string, string][]): string {
  switch (kind) {
    case "query-string":
    case "form-body":
      return items.map(([k, v]) => `${enc(k)}=${enc(v)}`).join("&");
    case "json-body": {
      const obj: Record<string, string> = {};
      for (const [k, v] of items) obj[k] = v;
      return JSON.stringify(obj);
    }
    case "path-segment":
      return items.map(([, v]) => "/" + enc(v)).join("");
    case "header":
    case "cookie":
      return items.map(([k, v]) => `${k}=${enc(v)}`).join("; ");
    default:
      throw new CodecError(`unknown carrier \`${kind}\``);
  }
}

export function parseCarrier(
  kind: Carrier,
  raw: string,
  names?: string[],
): [string, string][] {
  switch (kind) {
    case "query-string":
    case "form-body": {
      if (raw === "") return [];
      const out: [string, string][] = [];
      for (const part of raw.split("&")) {
        const i = part.indexOf("=");
        if (i < 0) throw new CodecError(`malformed pair \`${part}\``);
        out.push([dec(part.slice(0, i)), dec(part.slice(i + 1))]);
      }
      return out;
    }
    case "json-body": {
      let data: unknown;
      try {
        data = raw ? JSON.parse(raw) : {};
      } catch (err) {
        throw new CodecError(`malformed json body: ${err}`);
      }
      if (typeof data !== "object" || data === null || Array.isArray(data)) {
        throw new CodecError("json body is not an object");
      }
      return Object.entries(data as Record<string, unknown>).map(([k, v]) => [
        k,
        String(v),
      ]);
    }
    case "path-segment": {
      let parts: string[];
      if (raw === "") parts = [];
      else if (raw.startsWith("/")) parts = raw.split("/").slice(1);
      else parts = raw.split("/");
      const segs = parts.map(dec);
      const fieldNames = names ?? segs.map((_, i) => `seg${i}`);
      if (fieldNames.length !== segs.length) {
        throw new CodecError(
          `expected ${fieldNames.length} path segments, got ${segs.length}`,
        );
      }
      return fieldNames.map((n, i) => [n, segs[i]]);
    }
    case "header":
    case "cookie": {
      if (raw.trim() === "") return [];
      const out: [string, string][] = [];
      for (const chunk of raw.split(";")) {
        const part = chunk.trim();
        const i = part.indexOf("=");
        if (i < 0) throw new CodecError(`malformed pair \`${part}\``);
        out.push([part.slice(0, i).trim(), dec(part.slice(i + 1))]);
      }
      return out;
    }
    default:
      throw new CodecError(`unknown carrier \`${kind}\``);
  }
}

export function applyTransform(value: string, transform: Transform): string {
  if (transform === "string") return value;
  if (transform === "url") {
    if (/\s/.test(value)) throw new CodecError(`invalid url \`${value}\``);
    const candidate = value.includes("://") ? value : `https://${value}`;
    let parsed: URL;
    try {
      parsed = new URL(candidate);
    } catch {
      throw new CodecError(`invalid url \`${value}\``);
    }
    if (!parsed.host) throw new CodecError(`invalid url \`${value}\``);
    return value;
  }
  if (transform === "integer") {
    if (!/^-?\d+$/.test(value)) throw new CodecError(`invalid integer \`${value}\``);
    return String(parseInt(value, 10));
  }
  throw new CodecError(`unknown transform \`${transform}\``);
}

/** Ordered field map for a codec, transforms applied; null on mismatch. */
export function decodeFields(
  codec: CodecSpec,
  raw: string,
): Record<string, string> | null {
  try {
    const items = parseCarrier(
      codec.carrier,
      raw,
      codec.fields.map(([w]) => w),
    );
    const values: Record<string, string> = {};
    for (const [k, v] of items) values[k] = v;
    const out: Record<string, string> = {};
    for (const [wire, transform] of codec.fields) {
      if (!(wire in values)) return null;
      out[wire] = applyTransform(values[wire], transform);
    }
    return out;
  } catch {
    return null;
  }
}

export function parseUrl(href: string): ParsedUrl | null {
  let u: URL;
  try {
    u = new URL(href);
  } catch {
    return null;
  }
  const scheme = u.protocol.replace(/:$/, "");
  const host = u.host;
  const path = u.pathname || "/";
  const query = u.search.startsWith("?") ? u.search.slice(1) : u.search;
  return {
    scheme,
    host,
    path,
    query,
    href: `${scheme}://${host}${path}` + (query ? `?${query}` : ""),
  };
}

// ---------------------------------------------------------------------------
// persistent table shim
// ---------------------------------------------------------------------------

class MemoryDriver implements StorageDriver {
  private data: Record<string, string[][]> = {};

  async load(): Promise<Record<string, string[][]>> {
    return this.data;
  }

  async save(tables: Record<string, string[][]>): Promise<void> {
    this.data = tables;
  }
}

// ---------------------------------------------------------------------------
// the worker-facing API object
// ---------------------------------------------------------------------------

export interface BulwarkSupport {
  init(tables: string[]): void;
  setStorage(driver: StorageDriver): void;
  setBrowserHandle(id: string): void;
  browserHandle(): string;
  parseUrl(href: string): ParsedUrl | null;
  eq(a: unknown, b: unknown): boolean;
  decodeFields(codec: CodecSpec, raw: string): Record<string, string> | null;
  serializeCarrier(kind: Carrier, items: [string, string][]): string;
  parseCarrier(kind: Carrier, raw: string, names?: string[]): [string, string][];
  encodeQuery(items: [string, string][]): string;
  maybeQuery(qs: string): string;
  tableInsert(name: string, row: string[]): Promise<void>;
  tableLookup(name: string, columns: (string | null)[]): Promise<string[][]>;
  blockedResponse(reason?: string): Response;
  event(symbol: string, args: string[]): void;
  freshId(): string;
  events: { symbol: string; args: string[] }[];
}

export function createSupport(): BulwarkSupport {
  let driver: StorageDriver = new MemoryDriver();
  let handle = "browser";
  let counter = 0;
  const events: { symbol: string; args: string[] }[] = [];

  async function withTables<T>(
    fn: (tables: Record<string, string[][]>) => T | Promise<T>,
    persist: boolean,
  ): Promise<T> {
    let tables: Record<string, string[][]>;
    try {
      tables = await driver.load();
    } catch (err) {
      throw new StorageUnavailable(String(err));
    }
    const result = await fn(tables);
    if (persist) {
      try {
        await driver.save(tables);
      } catch (err) {
        throw new StorageUnavailable(String(err));
      }
    }
    return result;
  }

  return {
    init(_tables: string[]): void {
      // tables are created lazily; the declaration records intent
    },
    setStorage(d: StorageDriver): void {
      driver = d;
    },
    setBrowserHandle(id: string): void {
      handle = id;
    },
    browserHandle(): string {
      return handle;
    },
    parseUrl,
    eq(a: unknown, b: unknown): boolean {
      return typeof a === "string" && typeof b === "string" && a === b;
    },
    decodeFields,
    serializeCarrier,
    parseCarrier,
    encodeQuery(items: [string, string][]): string {
      return serializeCarrier("query-string", items);
    },
    maybeQuery(qs: string): string {
      return qs ? `?${qs}` : "";
    },
    async tableInsert(name: string, row: string[]): Promise<void> {
      await withTables((tables) => {
        const rows = (tables[name] ??= []);
        if (!rows.some((r) => r.length === row.length && r.every((v, i) => v === row[i]))) {
          rows.push([...row]);
        }
      }, true);
    },
    async tableLookup(name: string, columns: (string | null)[]): Promise<string[][]> {
      return withTables((tables) => {
        const rows = tables[name] ?? [];
        return rows.filter(
          (r) =>
            r.length === columns.length &&
            columns.every((c, i) => c === null || c === r[i]),
        );
      }, false);
    },
    blockedResponse(reason?: string): Response {
      return new Response("request blocked", {
        status: 403,
        headers: {
          "Content-Type": "text/plain",
          "X-Bulwark-Check": `failed ${reason ?? "sw"}`,
        },
      });
    },
    event(symbol: string, args: string[]): void {
      events.push({ symbol, args: [...args] });
    },
    freshId(): string {
      counter += 1;
      return `corr-${counter}`;
    },
    events,
  };
}

/** Attach the API to a worker global scope (what the bundled script does). */
export function installGlobal(target: Record<string, unknown>): BulwarkSupport {
  const api = createSupport();
  target["BulwarkSW"] = api;
  return api;
}
