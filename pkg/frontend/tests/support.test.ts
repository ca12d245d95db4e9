/**
 * Support-library conformance: carrier codecs against the shared corpus,
 * persistent tables across worker restarts, fail-closed storage.
 */

import { readFileSync } from "node:fs";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";

import { describe, expect, it } from "vitest";

import {
  Carrier,
  CodecError,
  StorageDriver,
  applyTransform,
  createSupport,
  parseCarrier,
  parseUrl,
  serializeCarrier,
} from "../src/support.js";

const HERE = dirname(fileURLToPath(import.meta.url));
const CORPUS = JSON.parse(
  readFileSync(join(HERE, "..", "..", "conformance", "codec-conformance.json"), "utf-8"),
) as {
  entries: {
    id: string;
    carrier: Carrier;
    fields: [string, string][];
    values: [string, string][];
    encoded: string;
  }[];
};

describe("carrier parsing", () => {
  it("parses a simple query string into an ordered field map", () => {
    expect(parseCarrier("query-string", "a=1&b=2")).toEqual([
      ["a", "1"],
      ["b", "2"],
    ]);
  });

  it("parses the provider-dialog fields with percent decoding", () => {
    const fields = parseCarrier(
      "query-string",
      "client_id=390639&redirect_uri=integrator.com%2Ffb-callback&state=5d938a",
    );
    expect(fields).toEqual([
      ["client_id", "390639"],
      ["redirect_uri", "integrator.com/fb-callback"],
      ["state", "5d938a"],
    ]);
  });

  it("rejects malformed pairs", () => {
    expect(() => parseCarrier("query-string", "novalue&x=1")).toThrow(CodecError);
  });

  it("rejects malformed json bodies", () => {
    expect(() => parseCarrier("json-body", "{not json")).toThrow(CodecError);
  });
});

describe("conformance corpus", () => {
  it("covers every carrier with enough fixtures", () => {
    const carriers = new Set(CORPUS.entries.map((e) => e.carrier));
    expect(carriers.size).toBe(6);
    expect(CORPUS.entries.length).toBeGreaterThanOrEqual(50);
  });

  for (const entry of CORPUS.entries) {
    it(`round-trips ${entry.id} byte for byte`, () => {
      expect(serializeCarrier(entry.carrier, entry.values)).toBe(entry.encoded);
      const names = entry.fields.map(([n]) => n);
      expect(parseCarrier(entry.carrier, entry.encoded, names)).toEqual(entry.values);
    });
  }
});

describe("transforms", () => {
  it("canonicalizes integers", () => {
    expect(applyTransform("042", "integer")).toBe("42");
    expect(() => applyTransform("4x", "integer")).toThrow(CodecError);
  });

  it("validates urls", () => {
    expect(applyTransform("https://a.example/x", "url")).toBe("https://a.example/x");
    expect(() => applyTransform("", "url")).toThrow(CodecError);
    expect(() => applyTransform("not a url", "url")).toThrow(CodecError);
  });
});

describe("url parsing", () => {
  it("splits and re-canonicalizes", () => {
    const u = parseUrl("https://rp.test/fb-callback?code=c&state=s");
    expect(u).not.toBeNull();
    expect(u!.scheme).toBe("https");
    expect(u!.host).toBe("rp.test");
    expect(u!.path).toBe("/fb-callback");
    expect(u!.query).toBe("code=c&state=s");
    expect(u!.href).toBe("https://rp.test/fb-callback?code=c&state=s");
  });

  it("returns null for garbage", () => {
    expect(parseUrl("not a url")).toBeNull();
  });
});

describe("tables", () => {
  it("stores then finds the same tuple", async () => {
    const s = createSupport();
    await s.tableInsert("MRPSessions", ["b-1", "state-1"]);
    const rows = await s.tableLookup("MRPSessions", ["b-1", "state-1"]);
    expect(rows).toEqual([["b-1", "state-1"]]);
  });

  it("misses a never-stored value", async () => {
    const s = createSupport();
    await s.tableInsert("MRPSessions", ["b-1", "state-1"]);
    expect(await s.tableLookup("MRPSessions", ["b-1", "state-other"])).toEqual([]);
  });

  it("treats null columns as wildcards", async () => {
    const s = createSupport();
    await s.tableInsert("T", ["a", "1"]);
    await s.tableInsert("T", ["a", "2"]);
    expect(await s.tableLookup("T", ["a", null])).toHaveLength(2);
  });

  it("inserts are idempotent per identical tuple", async () => {
    const s = createSupport();
    await s.tableInsert("T", ["x", "y"]);
    await s.tableInsert("T", ["x", "y"]);
    expect(await s.tableLookup("T", ["x", "y"])).toHaveLength(1);
  });

  it("is durable across a simulated worker restart", async () => {
    const store: { data: Record<string, string[][]> } = { data: {} };
    const driver: StorageDriver = {
      load: async () => store.data,
      save: async (tables) => {
        store.data = tables;
      },
    };
    const run1 = createSupport();
    run1.setStorage(driver);
    await run1.tableInsert("MRPSessions", ["b-1", "state-1"]);

    const run2 = createSupport(); // fresh worker activation
    run2.setStorage(driver);
    const rows = await run2.tableLookup("MRPSessions", ["b-1", "state-1"]);
    expect(rows).toEqual([["b-1", "state-1"]]);
  });

  it("surfaces storage failures for the fail-closed path", async () => {
    const s = createSupport();
    s.setStorage({
      load: async () => {
        throw new Error("quota exceeded");
      },
      save: async () => {
        throw new Error("quota exceeded");
      },
    });
    await expect(s.tableLookup("T", ["x"])).rejects.toThrow(/quota/);
  });
});

describe("blocked responses", () => {
  it("is a synthetic 403 with the check header", async () => {
    const s = createSupport();
    const r = s.blockedResponse("unit");
    expect(r.status).toBe(403);
    expect(r.headers.get("X-Bulwark-Check")).toBe("failed unit");
    expect(await r.text()).toBe("request blocked");
  });
});
