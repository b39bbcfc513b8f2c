/** Error banner store. Every failed request lands here; the UI renders each
 * entry as a dismissible banner. */

export interface ErrorEntry {
  id: number;
  message: string;
}

export class ErrorLog {
  private entries: ErrorEntry[] = [];
  private nextId = 1;
  private listeners: Array<(entries: readonly ErrorEntry[]) => void> = [];

  get all(): readonly ErrorEntry[] {
    return this.entries;
  }

  subscribe(listener: (entries: readonly ErrorEntry[]) => void): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private notify(): void {
    for (const listener of this.listeners) listener(this.entries);
  }

  push(message: string): ErrorEntry {
    const entry: ErrorEntry = { id: this.nextId++, message };
    this.entries = [...this.entries, entry];
    this.notify();
    return entry;
  }

  dismiss(id: number): void {
    const before = this.entries.length;
    this.entries = this.entries.filter((e) => e.id !== id);
    if (this.entries.length !== before) this.notify();
  }

  clear(): void {
    if (this.entries.length === 0) return;
    this.entries = [];
    this.notify();
  }
}
