// Operator console: transmission table with decode controls, plus the
// latest recovered image behind a cache-breaking refresh. Everything
// updates in place; the page is never reloaded.

import { ReceiverApi, TransmissionView } from "./api.js";

const PLACEHOLDER_SRC =
  "data:image/svg+xml," +
  encodeURIComponent(
    '<svg xmlns="http://www.w3.org/2000/svg" width="320" height="240">' +
    '<rect width="100%" height="100%" fill="#2a2f2a"/>' +
    '<text x="50%" y="50%" fill="#9aa" text-anchor="middle">no image decoded yet</text></svg>',
  );

function toDataUrl(bytes: ArrayBuffer): string {
  const view = new Uint8Array(bytes);
  let binary = "";
  const chunk = 0x8000;
  for (let i = 0; i < view.length; i += chunk) {
    binary += String.fromCharCode(...view.subarray(i, i + chunk));
  }
  return `data:image/jpeg;base64,${btoa(binary)}`;
}

export class Dashboard {
  readonly api: ReceiverApi;
  private root: HTMLElement;
  private pollMs: number;
  private timer: ReturnType<typeof setInterval> | null = null;
  private decodeInFlight = false;

  private banner!: HTMLElement;
  private tableBody!: HTMLElement;
  private image!: HTMLImageElement;
  private decodeMessage!: HTMLElement;

  constructor(root: HTMLElement, api: ReceiverApi, pollMs = 2000) {
    this.root = root;
    this.api = api;
    this.pollMs = pollMs;
    this.renderSkeleton();
  }

  private renderSkeleton(): void {
    this.root.innerHTML = `
      <div class="banner" id="banner" hidden></div>
      <section class="panel">
        <h2>Transmissions</h2>
        <div class="decode-message" id="decode-message" hidden></div>
        <table>
          <thead>
            <tr><th>id</th><th>received</th><th>size</th><th>status</th><th>decode</th></tr>
          </thead>
          <tbody id="rows">
            <tr class="placeholder"><td colspan="5">no transmissions</td></tr>
          </tbody>
        </table>
      </section>
      <section class="panel">
        <h2>Latest image</h2>
        <img id="latest-image" alt="latest recovered image" src="${PLACEHOLDER_SRC}">
        <div><button id="refresh-image" type="button">Refresh Image</button></div>
      </section>
    `;
    this.banner = this.root.querySelector("#banner")!;
    this.tableBody = this.root.querySelector("#rows")!;
    this.image = this.root.querySelector("#latest-image")!;
    this.decodeMessage = this.root.querySelector("#decode-message")!;
    this.root
      .querySelector("#refresh-image")!
      .addEventListener("click", () => void this.refreshImage());
  }

  start(): void {
    void this.refreshList();
    void this.refreshImage();
    this.timer = setInterval(() => void this.refreshList(), this.pollMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  private showBanner(text: string): void {
    this.banner.textContent = text;
    this.banner.hidden = false;
  }

  private clearBanner(): void {
    this.banner.hidden = true;
    this.banner.textContent = "";
  }

  async refreshList(): Promise<void> {
    let records: TransmissionView[];
    try {
      records = await this.api.listTransmissions();
    } catch (err) {
      this.showBanner(`receiver unreachable: ${String(err)} (retrying)`);
      return;
    }
    this.clearBanner();
    this.renderRows(records);
  }

  private renderRows(records: TransmissionView[]): void {
    this.tableBody.textContent = "";
    if (records.length === 0) {
      const row = document.createElement("tr");
      row.className = "placeholder";
      row.innerHTML = `<td colspan="5">no transmissions</td>`;
      this.tableBody.appendChild(row);
      return;
    }
    const newestFirst = [...records].sort((a, b) => b.id - a.id);
    for (const record of newestFirst) {
      this.tableBody.appendChild(this.renderRow(record));
    }
  }

  private renderRow(record: TransmissionView): HTMLTableRowElement {
    const row = document.createElement("tr");
    row.dataset.id = String(record.id);
    const received = new Date(record.received_at * 1000).toISOString();
    row.innerHTML = `
      <td>${record.id}</td>
      <td>${received}</td>
      <td>${record.encoded_size} B</td>
      <td><span class="badge badge-${record.status}">${record.status}</span></td>
      <td class="decode-cell"></td>
    `;
    const cell = row.querySelector(".decode-cell")!;
    const input = document.createElement("input");
    input.type = "password";
    input.placeholder = "password";
    input.autocomplete = "off";
    const button = document.createElement("button");
    button.type = "button";
    button.textContent = "decode";
    const actionable = record.status === "stored";
    input.disabled = !actionable;
    button.disabled = !actionable;
    button.addEventListener("click", () => {
      void this.submitDecode(record.id, input.value);
      input.value = "";
    });
    cell.appendChild(input);
    cell.appendChild(button);
    return row;
  }

  async submitDecode(id: number, password: string): Promise<void> {
    if (this.decodeInFlight) {
      return;
    }
    this.decodeInFlight = true;
    try {
      const result = await this.api.decodeTransmission(id, password);
      if (result.ok) {
        this.decodeMessage.hidden = true;
        await this.refreshList();
        await this.refreshImage();
      } else {
        this.decodeMessage.textContent =
          result.status === 401
            ? `decode of #${id} refused: wrong password`
            : `decode of #${id} failed: ${result.message}`;
        this.decodeMessage.hidden = false;
      }
    } catch (err) {
      this.showBanner(`decode request failed: ${String(err)}`);
    } finally {
      this.decodeInFlight = false;
    }
  }

  async refreshImage(): Promise<void> {
    let bytes: ArrayBuffer | null;
    try {
      bytes = await this.api.fetchLatestImage();
    } catch (err) {
      this.showBanner(`image refresh failed: ${String(err)}`);
      return; // keep whatever image is showing
    }
    if (bytes === null) {
      this.image.src = PLACEHOLDER_SRC;
      return;
    }
    this.image.src = toDataUrl(bytes);
  }
}
