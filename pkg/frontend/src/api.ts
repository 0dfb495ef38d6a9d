/** Typed client for the annotation service HTTP API. */

export interface RoundInfo {
  index: number;
  queries: number;
  answered: number;
  open: number;
}

export interface SessionInfo {
  manifest: {
    version: number;
    num_classes: number;
    image_ids: string[];
    per_image_budget: number;
    round_index: number;
    class_names: string[] | null;
    mode: string;
  };
  round: RoundInfo;
  pool_size: number;
}

export interface QueryItem {
  query_id: number;
  image_id: string;
  row: number;
  col: number;
  /** base64 PNG of the 65x65 neighborhood crop */
  neighborhood: string;
  status: "open" | "answered";
  class_id: number | null;
}

export interface QueriesResponse {
  round: number;
  queries: QueryItem[];
}

export interface LabelResult {
  query_id: number;
  class_id: number;
  open: number;
}

export interface AdvanceResult {
  round: number;
  labels_appended: number;
  pool_size: number;
  next_round: number;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

async function asJson<T>(res: Response): Promise<T> {
  if (!res.ok) {
    let detail = res.statusText;
    try {
      const body = (await res.json()) as { detail?: string };
      if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
      /* non-JSON error body, keep statusText */
    }
    throw new ApiError(res.status, detail);
  }
  return (await res.json()) as T;
}

export class ApiClient {
  private fetchImpl: FetchLike;

  constructor(private base: string = "", fetchImpl?: FetchLike) {
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  session(): Promise<SessionInfo> {
    return this.fetchImpl(`${this.base}/api/session`).then((r) =>
      asJson<SessionInfo>(r),
    );
  }

  queries(status: "open" | "answered" | "all" = "all"): Promise<QueriesResponse> {
    return this.fetchImpl(`${this.base}/api/queries?status=${status}`).then(
      (r) => asJson<QueriesResponse>(r),
    );
  }

  label(queryId: number, classId: number): Promise<LabelResult> {
    return this.fetchImpl(`${this.base}/api/labels`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ query_id: queryId, class_id: classId }),
    }).then((r) => asJson<LabelResult>(r));
  }

  advance(): Promise<AdvanceResult> {
    return this.fetchImpl(`${this.base}/api/rounds/advance`, {
      method: "POST",
    }).then((r) => asJson<AdvanceResult>(r));
  }

  imageUrl(imageId: string): string {
    return `${this.base}/api/images/${imageId}`;
  }
}
