// Unique query-string nonces so the browser never serves the image element
// from its cache. A monotonic counter guarantees uniqueness within the
// session even when two refreshes land in the same millisecond.

let counter = 0;

export function freshNonce(): string {
  counter += 1;
  const entropy = Math.random().toString(36).slice(2, 8);
  return `${Date.now().toString(36)}-${counter}-${entropy}`;
}

export function bustUrl(path: string): string {
  const sep = path.includes("?") ? "&" : "?";
  return `${path}${sep}cb=${freshNonce()}`;
}
