/**
 * Headless worker harness: runs an emitted monitor worker script inside an
 * emulated service-worker global scope (fetch event dispatch, scripted
 * network, importScripts shim backed by the support library) so the
 * conformance suites can drive it without a browser.
 *
 * A "worker restart" is a new harness over the same storage driver, which
 * models the registration-scoped persistence workers get in the browser.
 */

import vm from "node:vm";

import { BulwarkSupport, createSupport, StorageDriver } from "./support.js";

export interface ScriptedResponse {
  status: number;
  headers: [string, string][];
  body: string;
}

export type NetworkFn = (request: Request) => ScriptedResponse | Promise<ScriptedResponse>;

export interface DispatchResult {
  response: Response;
  fetched: boolean;
}

type Listener = (event: unknown) => void;

export class WorkerHarness {
  readonly support: BulwarkSupport;
  private listeners = new Map<string, Listener[]>();
  private network: NetworkFn;

  constructor(
    workerSource: string,
    options: {
      network?: NetworkFn;
      storage?: StorageDriver;
      browserHandle?: string;
      support?: BulwarkSupport;
    } = {},
  ) {
    this.network =
      options.network ??
      (() => ({ status: 200, headers: [], body: "" }) as ScriptedResponse);
    this.support = options.support ?? createSupport();
    if (options.storage) this.support.setStorage(options.storage);
    if (options.browserHandle) this.support.setBrowserHandle(options.browserHandle);

    const addEventListener = (name: string, fn: Listener) => {
      const list = this.listeners.get(name) ?? [];
      list.push(fn);
      this.listeners.set(name, list);
    };

    const harnessFetch = async (input: Request | string): Promise<Response> => {
      const request = typeof input === "string" ? new Request(input) : input;
      const scripted = await this.network(request);
      return new Response(scripted.body, {
        status: scripted.status,
        headers: scripted.headers,
      });
    };

    const scope: Record<string, unknown> = {
      addEventListener,
      importScripts: (..._paths: string[]) => {
        // the support bundle is pre-installed into the scope
      },
      fetch: harnessFetch,
      Request,
      Response,
      Headers,
      URL,
      console,
      BulwarkSW: this.support,
      skipWaiting: () => undefined,
      clients: { claim: async () => undefined },
    };
    scope["self"] = scope;
    const context = vm.createContext(scope);
    vm.runInContext(workerSource, context, { filename: "bulwark-sw.js" });
  }

  /** Dispatch one fetch event; reports whether the network was contacted. */
  async dispatchFetch(request: Request): Promise<DispatchResult> {
    const handlers = this.listeners.get("fetch") ?? [];
    if (handlers.length === 0) {
      throw new Error("worker registered no fetch handler");
    }
    let fetched = false;
    const outerNetwork = this.network;
    this.network = async (req) => {
      fetched = true;
      return outerNetwork(req);
    };
    try {
      let responded: Promise<Response> | Response | null = null;
      const event = {
        request,
        respondWith(value: Promise<Response> | Response) {
          responded = value;
        },
      };
      for (const handler of handlers) {
        handler(event);
      }
      if (responded === null) {
        // no interception: the platform performs the plain fetch
        const response = await this.networkFetch(request);
        return { response, fetched: true };
      }
      return { response: await responded, fetched };
    } finally {
      this.network = outerNetwork;
    }
  }

  private async networkFetch(request: Request): Promise<Response> {
    const scripted = await this.network(request);
    return new Response(scripted.body, {
      status: scripted.status,
      headers: scripted.headers,
    });
  }
}
