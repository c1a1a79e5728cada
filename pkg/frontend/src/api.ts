/** Typed client for the segmentation service with a slice cache and the
 * polling loop used after a segmentation job starts. */

export interface CaseSummary {
  case_id: string;
  dims: [number, number, number];
  spacing: [number, number, number];
  annotations: { right: boolean; left: boolean };
  has_prediction: boolean;
}

export interface JobInfo {
  job_id: string;
  case_id: string;
  status: "PENDING" | "RUNNING" | "DONE" | "FAILED";
  error: string | null;
}

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

async function errorDetail(resp: Response): Promise<string> {
  try {
    const body = await resp.json();
    return body.detail ?? JSON.stringify(body);
  } catch {
    return resp.statusText;
  }
}

export class ApiClient {
  constructor(private base: string = "",
              private fetchFn: FetchLike = (u, i) => fetch(u, i)) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const resp = await this.fetchFn(this.base + path, init);
    if (!resp.ok) {
      throw new ApiError(resp.status, await errorDetail(resp));
    }
    return resp;
  }

  async listCases(): Promise<CaseSummary[]> {
    return (await this.request("/cases")).json();
  }

  async getSliceBlob(caseId: string, z: number): Promise<Blob> {
    return (await this.request(`/cases/${caseId}/slice/${z}`)).blob();
  }

  async putAnnotation(caseId: string, target: string, payload: string): Promise<void> {
    await this.request(`/cases/${caseId}/annotation/${target}`, {
      method: "PUT",
      headers: { "content-type": "application/json" },
      body: payload,
    });
  }

  async getAnnotationText(caseId: string, target: string): Promise<string> {
    return (await this.request(`/cases/${caseId}/annotation/${target}`)).text();
  }

  async startSegmentation(caseId: string): Promise<JobInfo> {
    return (await this.request(`/cases/${caseId}/segment`, { method: "POST" })).json();
  }

  async getJob(jobId: string): Promise<JobInfo> {
    return (await this.request(`/jobs/${jobId}`)).json();
  }

  async getOverlayBlob(caseId: string, z: number): Promise<Blob> {
    return (await this.request(`/cases/${caseId}/overlay/${z}`)).blob();
  }
}

/** Cache + in-flight deduplication for slice images, so scrolling through
 * a volume issues exactly one fetch per distinct slice. */
export class SliceCache {
  private cache = new Map<string, Promise<Blob>>();

  constructor(private loader: (caseId: string, z: number) => Promise<Blob>) {}

  get(caseId: string, z: number): Promise<Blob> {
    const key = `${caseId}/${z}`;
    let entry = this.cache.get(key);
    if (!entry) {
      entry = this.loader(caseId, z).catch((err) => {
        this.cache.delete(key); // do not cache failures
        throw err;
      });
      this.cache.set(key, entry);
    }
    return entry;
  }

  clear(): void {
    this.cache.clear();
  }
}

export interface PollOptions {
  initialMs?: number;
  capMs?: number;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

/** Poll a job until DONE or FAILED, backing off exponentially to the cap
 * (5 s by default). Returns the terminal job info. */
export async function pollJob(api: ApiClient, jobId: string,
                              options: PollOptions = {}): Promise<JobInfo> {
  const initial = options.initialMs ?? 250;
  const cap = options.capMs ?? 5000;
  const sleep = options.sleep ?? defaultSleep;
  let delay = initial;
  for (;;) {
    const job = await api.getJob(jobId);
    if (job.status === "DONE" || job.status === "FAILED") {
      return job;
    }
    await sleep(delay);
    delay = Math.min(delay * 2, cap);
  }
}
