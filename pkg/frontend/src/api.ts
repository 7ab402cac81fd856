// Thin client over the receiver's HTTP/JSON API.

import { bustUrl } from "./cacheBuster.js";

export interface TransmissionView {
  id: number;
  received_at: number;
  encoded_size: number;
  status: "receiving" | "stored" | "decoded" | "aborted";
}

export type DecodeResult =
  | { ok: true }
  | { ok: false; status: number; message: string };

export class ReceiverApi {
  constructor(private baseUrl: string = "") {}

  async listTransmissions(): Promise<TransmissionView[]> {
    const res = await fetch(`${this.baseUrl}/api/transmissions`);
    if (!res.ok) {
      throw new Error(`list failed: HTTP ${res.status}`);
    }
    return (await res.json()) as TransmissionView[];
  }

  async decodeTransmission(id: number, password: string): Promise<DecodeResult> {
    const res = await fetch(`${this.baseUrl}/api/transmissions/${id}/decode`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ password }),
    });
    if (res.ok) {
      return { ok: true };
    }
    let message = `HTTP ${res.status}`;
    try {
      const body = (await res.json()) as { detail?: string };
      if (body.detail) {
        message = body.detail;
      }
    } catch {
      // non-JSON error body; keep the status text
    }
    return { ok: false, status: res.status, message };
  }

  /** Fetch the latest decoded image through a cache-busted URL. */
  async fetchLatestImage(): Promise<ArrayBuffer | null> {
    const res = await fetch(bustUrl(`${this.baseUrl}/api/images/latest`));
    if (res.status === 404) {
      return null;
    }
    if (!res.ok) {
      throw new Error(`image fetch failed: HTTP ${res.status}`);
    }
    return await res.arrayBuffer();
  }
}
