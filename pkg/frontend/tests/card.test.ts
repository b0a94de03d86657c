import { describe, expect, it } from "vitest";

import { ApiError, FetchLike, NetworkError, ReviewApi } from "../src/api.js";
import { CardController } from "../src/card.js";
import { ReviewInstance } from "../src/model.js";

function instance(id: string): ReviewInstance {
  return {
    id,
    image: { uri: `img://review/${id}`, width_px: 640, height_px: 480, kind: "natural" },
    caption: "A blue car parked near the tree.",
    alignment_label: false,
    gt_feedback: "The car is red, not blue",
    gt_misalignment_in_text: "blue car",
    gt_visual: [{ box: [100, 100, 500, 500], label: "red car" }],
    review_status: "pending",
  };
}

function aggregate(id: string) {
  return {
    instance_id: id,
    n_raters: 1,
    yes_counts: { feedback: 1, text: 1, visual: 1 },
    unanimous_all_yes: false,
  };
}

/** In-memory service stub: a queue of instances, a scriptable fault slot,
 * and a log of every request that reaches it. */
class StubService {
  queue: ReviewInstance[] = [];
  posts: Array<{ url: string; body: unknown }> = [];
  gets: string[] = [];
  failNextPost: { status: number; code: string } | { network: true } | null = null;
  failNextGet: { network: true } | null = null;

  fetchLike: FetchLike = async (url, init) => {
    if (init?.method === "POST") {
      if (this.failNextPost) {
        const fault = this.failNextPost;
        this.failNextPost = null;
        if ("network" in fault) throw new TypeError("fetch failed");
        return respond(fault.status, {
          error: { code: fault.code, message: "injected fault" },
        });
      }
      const body = JSON.parse(init.body ?? "null");
      this.posts.push({ url, body });
      return respond(200, aggregate(body.instance_id));
    }
    this.gets.push(url);
    if (this.failNextGet) {
      this.failNextGet = null;
      throw new TypeError("fetch failed");
    }
    const next = this.queue.shift() ?? null;
    return respond(200, { instance: next ? { ...next } : null });
  };
}

function respond(status: number, body: unknown) {
  return Promise.resolve({ status, json: () => Promise.resolve(body) });
}

function controllerWith(stub: StubService, rater = "r1"): CardController {
  return new CardController(new ReviewApi("http://stub", stub.fetchLike), rater);
}

function answerAll(c: CardController, feedback = "yes", text = "yes", visual = "yes") {
  c.setAnswer("feedback", feedback as "yes" | "no");
  c.setAnswer("text", text as "yes" | "no");
  c.setAnswer("visual", visual as "yes" | "no");
}

describe("CardController", () => {
  it("loads the first card on start", async () => {
    const stub = new StubService();
    stub.queue = [instance("a")];
    const c = controllerWith(stub);
    const phase = await c.start();
    expect(phase.kind).toBe("card");
    expect(c.card?.instanceId).toBe("a");
    expect(stub.gets[0]).toBe("http://stub/api/next?rater=r1");
  });

  it("shows the done screen when the queue is exhausted", async () => {
    const stub = new StubService();
    const c = controllerWith(stub);
    expect((await c.start()).kind).toBe("done");
  });

  it("enables submit only when every question is answered", async () => {
    const stub = new StubService();
    stub.queue = [instance("a")];
    const c = controllerWith(stub);
    await c.start();
    expect(c.submitEnabled).toBe(false);
    c.setAnswer("feedback", "yes");
    c.setAnswer("text", "no");
    expect(c.submitEnabled).toBe(false);
    c.setAnswer("visual", "yes");
    expect(c.submitEnabled).toBe(true);
  });

  it("never posts an incomplete verdict", async () => {
    const stub = new StubService();
    stub.queue = [instance("a")];
    const c = controllerWith(stub);
    await c.start();
    c.setAnswer("feedback", "yes");
    const phase = await c.submit(); // two questions still unanswered
    expect(phase.kind).toBe("card");
    expect(stub.posts).toHaveLength(0);
  });

  it("posts the exact verdict schema and advances", async () => {
    const stub = new StubService();
    stub.queue = [instance("a"), instance("b")];
    const c = controllerWith(stub, "alice");
    await c.start();
    answerAll(c, "yes", "no", "yes");
    const phase = await c.submit();
    expect(phase.kind).toBe("card");
    expect(c.card?.instanceId).toBe("b");
    expect(stub.posts).toEqual([
      {
        url: "http://stub/api/verdicts",
        body: {
          instance_id: "a",
          rater_id: "alice",
          feedback_ok: true,
          text_ok: false,
          visual_ok: true,
          submitted_at: "",
        },
      },
    ]);
  });

  it("keeps the card unchanged when the server answers 500", async () => {
    const stub = new StubService();
    stub.queue = [instance("a")];
    const c = controllerWith(stub);
    await c.start();
    answerAll(c);
    stub.failNextPost = { status: 500, code: "Exploded" };
    const phase = await c.submit();
    expect(phase.kind).toBe("card");
    if (phase.kind !== "card") throw new Error("unreachable");
    expect(phase.card.instanceId).toBe("a");
    expect(phase.card.answers).toEqual({ feedback: "yes", text: "yes", visual: "yes" });
    expect(phase.error).toContain("Exploded");
    expect(stub.posts).toHaveLength(0);
    // the rater fixes nothing and retries; now it goes through
    const after = await c.submit();
    expect(after.kind).toBe("done");
    expect(stub.posts).toHaveLength(1);
  });

  it("shows an inline error and preserves state on 4xx", async () => {
    const stub = new StubService();
    stub.queue = [instance("a")];
    const c = controllerWith(stub);
    await c.start();
    answerAll(c, "no", "no", "no");
    stub.failNextPost = { status: 404, code: "UnknownInstance" };
    const phase = await c.submit();
    expect(phase.kind).toBe("card");
    if (phase.kind !== "card") throw new Error("unreachable");
    expect(phase.error).toContain("UnknownInstance");
    expect(phase.card.answers.feedback).toBe("no");
  });

  it("rolls back to the card on a network failure mid-submit", async () => {
    const stub = new StubService();
    stub.queue = [instance("a")];
    const c = controllerWith(stub);
    await c.start();
    answerAll(c);
    stub.failNextPost = { network: true };
    const phase = await c.submit();
    expect(phase.kind).toBe("card");
    if (phase.kind !== "card") throw new Error("unreachable");
    expect(phase.error).toContain("unreachable");
  });

  it("raises the retry banner when loading fails, and retries", async () => {
    const stub = new StubService();
    stub.queue = [instance("a")];
    stub.failNextGet = { network: true };
    const c = controllerWith(stub);
    const phase = await c.start();
    expect(phase.kind).toBe("fault");
    const recovered = await c.retry();
    expect(recovered.kind).toBe("card");
    expect(c.card?.instanceId).toBe("a");
  });

  it("allows at most one submit in flight", async () => {
    const stub = new StubService();
    stub.queue = [instance("a"), instance("b")];
    const c = controllerWith(stub);
    await c.start();
    answerAll(c);
    const [first, second] = await Promise.all([c.submit(), c.submit()]);
    expect(stub.posts).toHaveLength(1);
    expect([first.kind, second.kind].sort()).toEqual(["card", "loading"]);
  });
});

describe("ReviewApi error surface", () => {
  it("wraps the service error envelope", async () => {
    const fetchLike: FetchLike = async () =>
      respond(403, { error: { code: "UnknownRater", message: "nope" } });
    const api = new ReviewApi("http://stub", fetchLike);
    await expect(api.next("ghost")).rejects.toMatchObject({
      name: "ApiError",
      status: 403,
      code: "UnknownRater",
    });
  });

  it("wraps transport failures as NetworkError", async () => {
    const fetchLike: FetchLike = async () => {
      throw new TypeError("fetch failed");
    };
    const api = new ReviewApi("http://stub", fetchLike);
    await expect(api.next("r1")).rejects.toBeInstanceOf(NetworkError);
  });

  it("rejects service responses that violate the wire schema", async () => {
    const fetchLike: FetchLike = async () => respond(200, { bogus: true });
    const api = new ReviewApi("http://stub", fetchLike);
    await expect(api.next("r1")).rejects.toThrow();
  });

  it("distinguishes error envelopes from malformed errors", () => {
    expect(new ApiError(500, "X", "y").status).toBe(500);
  });
});
