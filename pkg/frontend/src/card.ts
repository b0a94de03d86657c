/** Rating-session controller: one rater working through their queue.
 *
 * This is the component the DOM layer (and the headless acceptance test)
 * drives; it owns all state transitions and never lets an incomplete verdict
 * out.  Phases:
 *
 *   loading -> card -> (submit) -> card | done
 *                   -> fault (load failed; retry() re-attempts)
 *
 * A failed submit never advances: the card — answers included — is restored
 * exactly as it was, with an inline error message (4xx) or a transport note
 * (5xx / network).  At most one submit is in flight at a time.
 */
import { ApiError, NetworkError, ReviewApi } from "./api.js";
import {
  Answer,
  Question,
  ReviewCard,
  canSubmit,
  cardFromInstance,
  toggledAnswer,
  verdictPayload,
} from "./model.js";

export type Phase =
  | { kind: "idle" }
  | { kind: "loading" }
  | { kind: "card"; card: ReviewCard; error: string | null }
  | { kind: "done" }
  | { kind: "fault"; message: string };

export class CardController {
  private phase_: Phase = { kind: "idle" };
  private submitting = false;
  private listeners: Array<(phase: Phase) => void> = [];

  constructor(
    private readonly api: ReviewApi,
    readonly raterId: string,
  ) {}

  get phase(): Phase {
    return this.phase_;
  }

  get card(): ReviewCard | null {
    return this.phase_.kind === "card" ? this.phase_.card : null;
  }

  get submitEnabled(): boolean {
    return (
      this.phase_.kind === "card" && canSubmit(this.phase_.card) && !this.submitting
    );
  }

  onChange(listener: (phase: Phase) => void): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private setPhase(phase: Phase): void {
    this.phase_ = phase;
    for (const listener of this.listeners) listener(phase);
  }

  /** Fetch the first card (or the done screen). */
  async start(): Promise<Phase> {
    return this.loadNext();
  }

  /** Re-attempt the failed load behind the retry banner. */
  async retry(): Promise<Phase> {
    if (this.phase_.kind !== "fault") return this.phase_;
    return this.loadNext();
  }

  private async loadNext(): Promise<Phase> {
    this.setPhase({ kind: "loading" });
    try {
      const instance = await this.api.next(this.raterId);
      if (instance === null) {
        this.setPhase({ kind: "done" });
      } else {
        this.setPhase({ kind: "card", card: cardFromInstance(instance), error: null });
      }
    } catch (err) {
      this.setPhase({ kind: "fault", message: describe(err) });
    }
    return this.phase_;
  }

  /** Set one question's answer directly (mouse path). */
  setAnswer(question: Question, answer: Answer): void {
    if (this.phase_.kind !== "card") return;
    const card = this.phase_.card;
    this.setPhase({
      kind: "card",
      card: { ...card, answers: { ...card.answers, [question]: answer } },
      error: null,
    });
  }

  /** Cycle one question's answer (keyboard path: keys 1/2/3). */
  toggle(question: Question): void {
    if (this.phase_.kind !== "card") return;
    this.setAnswer(question, toggledAnswer(this.phase_.card.answers[question]));
  }

  /** Submit the current card and advance to the next one.
   *
   * No-op unless every question is answered and no submit is already in
   * flight.  The optimistic loading state is rolled back to the untouched
   * card if the POST fails for any reason. */
  async submit(): Promise<Phase> {
    if (this.phase_.kind !== "card" || this.submitting) return this.phase_;
    const snapshot = this.phase_.card;
    if (!canSubmit(snapshot)) return this.phase_;

    const payload = verdictPayload(snapshot, this.raterId);
    this.submitting = true;
    this.setPhase({ kind: "loading" }); // optimistic advance
    try {
      await this.api.submitVerdict(payload);
    } catch (err) {
      // rollback: same card, same answers, inline error
      this.setPhase({ kind: "card", card: snapshot, error: describe(err) });
      return this.phase_;
    } finally {
      this.submitting = false;
    }
    return this.loadNext();
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) {
    return `${err.code}: ${err.message}`;
  }
  if (err instanceof NetworkError) {
    return `service unreachable — ${err.message}`;
  }
  return String(err);
}
