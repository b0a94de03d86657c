/** DOM layer: renders the controller's phase and forwards input events.
 *
 * Deliberately framework-free — the controller owns every state transition,
 * so this file is only templating plus event plumbing.  All user-facing
 * copy is injectable so question phrasings can be tuned without rebuilding.
 */
import { CardController, Phase } from "./card.js";
import { QUESTIONS, Question, ReviewCard, scaleBox } from "./model.js";

export interface UiCopy {
  questions: Record<Question, string>;
  submit: string;
  retry: string;
  done: string;
  loading: string;
}

export const DEFAULT_COPY: UiCopy = {
  questions: {
    feedback: "Is the feedback statement correct for this image?",
    text: "Is the highlighted phrase the part of the caption that is wrong?",
    visual: "Do the boxes mark the image region the feedback talks about?",
  },
  submit: "Submit verdict",
  retry: "Retry",
  done: "All assigned instances reviewed — thank you!",
  loading: "Loading…",
};

const KEY_TO_QUESTION: Record<string, Question> = {
  "1": "feedback",
  "2": "text",
  "3": "visual",
};

export class ReviewApp {
  private detachKeys: (() => void) | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly controller: CardController,
    private readonly copy: UiCopy = DEFAULT_COPY,
  ) {}

  mount(): void {
    this.controller.onChange((phase) => this.render(phase));
    const onKey = (event: KeyboardEvent) => {
      const question = KEY_TO_QUESTION[event.key];
      if (question) {
        this.controller.toggle(question);
      } else if (event.key === "Enter" && this.controller.submitEnabled) {
        void this.controller.submit();
      }
    };
    document.addEventListener("keydown", onKey);
    this.detachKeys = () => document.removeEventListener("keydown", onKey);
    void this.controller.start();
  }

  unmount(): void {
    this.detachKeys?.();
    this.detachKeys = null;
  }

  private render(phase: Phase): void {
    this.root.replaceChildren();
    switch (phase.kind) {
      case "idle":
      case "loading":
        this.root.append(el("p", "status", this.copy.loading));
        return;
      case "fault": {
        const banner = el("div", "banner banner-fault");
        banner.append(
          el("p", "", phase.message),
          button(this.copy.retry, () => void this.controller.retry()),
        );
        this.root.append(banner);
        return;
      }
      case "done":
        this.root.append(el("p", "done", this.copy.done));
        return;
      case "card":
        this.renderCard(phase.card, phase.error);
        return;
    }
  }

  private renderCard(card: ReviewCard, error: string | null): void {
    const figure = el("figure", "image-frame");
    const img = document.createElement("img");
    img.src = card.imageUri;
    img.alt = card.caption;
    figure.append(img);

    const overlay = el("div", "overlay-layer");
    figure.append(overlay);
    const drawBoxes = () => {
      overlay.replaceChildren();
      const extent = {
        width: img.clientWidth || img.naturalWidth,
        height: img.clientHeight || img.naturalHeight,
      };
      if (!(extent.width > 0) || !(extent.height > 0)) return;
      for (const labeled of card.boxes) {
        const rect = scaleBox(labeled.box, extent);
        const boxEl = el("div", "overlay-box");
        boxEl.style.left = `${rect.left}px`;
        boxEl.style.top = `${rect.top}px`;
        boxEl.style.width = `${rect.width}px`;
        boxEl.style.height = `${rect.height}px`;
        boxEl.append(el("span", "overlay-label", labeled.label));
        overlay.append(boxEl);
      }
    };
    img.addEventListener("load", drawBoxes);
    if (typeof ResizeObserver !== "undefined") {
      new ResizeObserver(drawBoxes).observe(img);
    }
    drawBoxes();

    const caption = el("p", "caption");
    if (card.cue) {
      caption.append(
        document.createTextNode(card.caption.slice(0, card.cue.start)),
        el("mark", "cue", card.caption.slice(card.cue.start, card.cue.end)),
        document.createTextNode(card.caption.slice(card.cue.end)),
      );
    } else {
      caption.textContent = card.caption;
    }

    const controls = el("div", "questions");
    QUESTIONS.forEach((question, index) => {
      const row = el("div", "question-row");
      row.append(el("span", "question-text", `${index + 1}. ${this.copy.questions[question]}`));
      for (const answer of ["yes", "no"] as const) {
        const btn = button(answer, () => this.controller.setAnswer(question, answer));
        btn.className =
          card.answers[question] === answer ? "answer selected" : "answer";
        row.append(btn);
      }
      controls.append(row);
    });

    const submit = button(this.copy.submit, () => void this.controller.submit());
    submit.disabled = !this.controller.submitEnabled;
    submit.className = "submit";

    this.root.append(figure, caption, el("p", "feedback", card.feedback), controls, submit);
    if (error) {
      this.root.append(el("p", "banner banner-error", error));
    }
  }
}

function el(tag: string, className: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function button(label: string, onClick: () => void): HTMLButtonElement {
  const node = document.createElement("button");
  node.textContent = label;
  node.addEventListener("click", onClick);
  return node;
}
