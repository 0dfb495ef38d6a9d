/** Annotation round state: one active query, immutable answers, server truth. */

import { ApiClient, ApiError, QueryItem, SessionInfo } from "./api.js";

export type SubmitOutcome =
  | { kind: "accepted"; queryId: number; classId: number }
  | { kind: "already-answered"; queryId: number; classId: number | null }
  | { kind: "retry"; queryId: number; reason: string }
  | { kind: "no-active-query" }
  | { kind: "rejected"; reason: string };

export class AnnotationView {
  session: SessionInfo | null = null;
  private open: QueryItem[] = [];
  private answers = new Map<number, number>();
  private total = 0;

  constructor(private client: ApiClient) {}

  /** Pull session + query state from the server; answered state survives
   *  reloads because the server is the source of truth. */
  async load(): Promise<void> {
    this.session = await this.client.session();
    const res = await this.client.queries("all");
    this.open = [];
    this.answers = new Map();
    this.total = res.queries.length;
    for (const q of res.queries) {
      if (q.status === "answered" && q.class_id !== null) {
        this.answers.set(q.query_id, q.class_id);
      } else {
        this.open.push(q);
      }
    }
  }

  classNames(): string[] {
    const m = this.session?.manifest;
    if (!m) return [];
    if (m.class_names) return m.class_names;
    return Array.from({ length: m.num_classes }, (_, i) => `class ${i}`);
  }

  /** The single query the annotator is looking at; null when done. */
  get current(): QueryItem | null {
    return this.open.length > 0 ? this.open[0] : null;
  }

  get progress(): { answered: number; total: number } {
    return { answered: this.answers.size, total: this.total };
  }

  get roundComplete(): boolean {
    return this.total > 0 && this.answers.size === this.total;
  }

  answerOf(queryId: number): number | undefined {
    return this.answers.get(queryId);
  }

  /** Submit a class for the active query.  Never posts twice for the same
   *  query: an answered query is dropped from the open queue, and a 409
   *  resolves by refreshing and keeping the server's answer. */
  async submit(classId: number): Promise<SubmitOutcome> {
    const q = this.current;
    if (!q) return { kind: "no-active-query" };
    if (this.answers.has(q.query_id)) {
      // defensive: should have left the queue when answered
      this.open.shift();
      return {
        kind: "already-answered",
        queryId: q.query_id,
        classId: this.answers.get(q.query_id) ?? null,
      };
    }
    try {
      const res = await this.client.label(q.query_id, classId);
      this.answers.set(q.query_id, res.class_id);
      this.open.shift();
      return { kind: "accepted", queryId: q.query_id, classId: res.class_id };
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // someone answered it first; the server kept that answer
        await this.load();
        return {
          kind: "already-answered",
          queryId: q.query_id,
          classId: this.answers.get(q.query_id) ?? null,
        };
      }
      if (err instanceof ApiError) {
        return { kind: "rejected", reason: err.message };
      }
      // network trouble: leave the queue untouched so a retry is safe
      return {
        kind: "retry",
        queryId: q.query_id,
        reason: err instanceof Error ? err.message : String(err),
      };
    }
  }

  async advanceRound(): Promise<boolean> {
    if (!this.roundComplete) return false;
    await this.client.advance();
    await this.load();
    return true;
  }
}

/** Map a keyboard key to a class index; digits address classes directly. */
export function classForKey(key: string, numClasses: number): number | null {
  if (!/^[0-9]$/.test(key)) return null;
  const idx = Number(key);
  return idx < numClasses ? idx : null;
}
