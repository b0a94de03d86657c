/** View-model types, wire schemas, and the overlay geometry.
 *
 * Boxes arrive from the service in a 0-1000 normalized frame; the overlay
 * maps them onto whatever size the image actually renders at — each axis is
 * scaled by rendered_extent / 1000, nothing else.  Keeping that mapping a
 * pure function is what lets the scaling be unit-tested against synthetic
 * viewport sizes without a browser.
 */
import { z } from "zod";

export const QUESTIONS = ["feedback", "text", "visual"] as const;
export type Question = (typeof QUESTIONS)[number];

export type Answer = "unanswered" | "yes" | "no";

// ---------------------------------------------------------------------------
// Wire schemas (the review-service JSON API, consumed verbatim)
// ---------------------------------------------------------------------------

export const NormBoxSchema = z
  .tuple([z.number().int(), z.number().int(), z.number().int(), z.number().int()])
  .refine(
    ([x1, y1, x2, y2]) =>
      x1 >= 0 && y1 >= 0 && x2 <= 1000 && y2 <= 1000 && x1 < x2 && y1 < y2,
    { message: "box must satisfy 0 <= x1 < x2 <= 1000 and 0 <= y1 < y2 <= 1000" },
  );
export type NormBox = z.infer<typeof NormBoxSchema>;

export const LabeledBoxSchema = z.object({
  box: NormBoxSchema,
  label: z.string().min(1),
});
export type LabeledBox = z.infer<typeof LabeledBoxSchema>;

export const ImageRefSchema = z.object({
  uri: z.string().min(1),
  width_px: z.number().int().positive(),
  height_px: z.number().int().positive(),
  kind: z.string(),
});
export type ImageRef = z.infer<typeof ImageRefSchema>;

export const ReviewInstanceSchema = z.object({
  id: z.string().min(1),
  image: ImageRefSchema,
  caption: z.string(),
  alignment_label: z.boolean(),
  gt_feedback: z.string().optional(),
  gt_misalignment_in_text: z.string().optional(),
  gt_visual: z.array(LabeledBoxSchema).optional(),
  review_status: z.string(),
});
export type ReviewInstance = z.infer<typeof ReviewInstanceSchema>;

export const NextResponseSchema = z.object({
  instance: ReviewInstanceSchema.nullable(),
});

/** Exactly the verdict record the service persists — no extra fields, none
 * missing.  submitted_at is sent empty; the service stamps it. */
export const VerdictPayloadSchema = z
  .object({
    instance_id: z.string().min(1),
    rater_id: z.string().min(1),
    feedback_ok: z.boolean(),
    text_ok: z.boolean(),
    visual_ok: z.boolean(),
    submitted_at: z.string(),
  })
  .strict();
export type VerdictPayload = z.infer<typeof VerdictPayloadSchema>;

export const AggregateSchema = z.object({
  instance_id: z.string(),
  n_raters: z.number().int().nonnegative(),
  yes_counts: z.object({
    feedback: z.number().int().nonnegative(),
    text: z.number().int().nonnegative(),
    visual: z.number().int().nonnegative(),
  }),
  unanimous_all_yes: z.boolean(),
});
export type Aggregate = z.infer<typeof AggregateSchema>;

export const ExportResponseSchema = z.object({
  accepted: z.array(ReviewInstanceSchema),
  rate: z.number(),
  n_total: z.number().int().nonnegative(),
});
export type ExportResponse = z.infer<typeof ExportResponseSchema>;

export const ErrorEnvelopeSchema = z.object({
  error: z.object({ code: z.string(), message: z.string() }),
});

// ---------------------------------------------------------------------------
// Overlay geometry
// ---------------------------------------------------------------------------

export interface RenderedExtent {
  width: number;
  height: number;
}

/** A box positioned in rendered-image coordinates (CSS pixels, fractional). */
export interface OverlayRect {
  left: number;
  top: number;
  width: number;
  height: number;
}

/** Map a normalized box onto a rendered image: coordinate * extent / 1000
 * per axis.  For an extent equal to the image's true pixel size this undoes
 * the 0-1000 normalization (up to its rounding), so the overlay lands on the
 * same pixels the box was derived from at any viewport size. */
export function scaleBox(box: NormBox, extent: RenderedExtent): OverlayRect {
  if (!(extent.width > 0) || !(extent.height > 0)) {
    throw new RangeError("rendered extent must be positive on both axes");
  }
  const [x1, y1, x2, y2] = box;
  const left = (x1 * extent.width) / 1000;
  const top = (y1 * extent.height) / 1000;
  return {
    left,
    top,
    width: (x2 * extent.width) / 1000 - left,
    height: (y2 * extent.height) / 1000 - top,
  };
}

// ---------------------------------------------------------------------------
// Caption cue highlighting
// ---------------------------------------------------------------------------

export interface CueSpan {
  start: number;
  end: number; // exclusive
}

/** First case-insensitive occurrence of the textual cue inside the caption,
 * or null when the cue does not appear verbatim (the caption is then shown
 * unhighlighted rather than mis-highlighted). */
export function cueSpan(caption: string, cue: string | undefined): CueSpan | null {
  if (!cue) return null;
  const idx = caption.toLowerCase().indexOf(cue.toLowerCase());
  if (idx < 0) return null;
  return { start: idx, end: idx + cue.length };
}

// ---------------------------------------------------------------------------
// Card view model
// ---------------------------------------------------------------------------

export interface ReviewCard {
  instanceId: string;
  imageUri: string;
  caption: string;
  cue: CueSpan | null;
  feedback: string;
  boxes: LabeledBox[];
  answers: Record<Question, Answer>;
}

export function cardFromInstance(instance: ReviewInstance): ReviewCard {
  return {
    instanceId: instance.id,
    imageUri: instance.image.uri,
    caption: instance.caption,
    cue: cueSpan(instance.caption, instance.gt_misalignment_in_text),
    feedback: instance.gt_feedback ?? "",
    boxes: instance.gt_visual ?? [],
    answers: { feedback: "unanswered", text: "unanswered", visual: "unanswered" },
  };
}

/** Submit is allowed only once every question has a yes/no answer. */
export function canSubmit(card: ReviewCard): boolean {
  return QUESTIONS.every((q) => card.answers[q] !== "unanswered");
}

/** Keyboard toggling cycles unanswered -> yes -> no -> yes -> ... */
export function toggledAnswer(current: Answer): Answer {
  return current === "yes" ? "no" : "yes";
}

/** Build the POST body for a fully answered card.  Throws if any question is
 * unanswered — a verdict with a hole must be unrepresentable, not just
 * discouraged by the submit button state. */
export function verdictPayload(card: ReviewCard, raterId: string): VerdictPayload {
  if (!canSubmit(card)) {
    throw new Error("cannot build a verdict while a question is unanswered");
  }
  return VerdictPayloadSchema.parse({
    instance_id: card.instanceId,
    rater_id: raterId,
    feedback_ok: card.answers.feedback === "yes",
    text_ok: card.answers.text === "yes",
    visual_ok: card.answers.visual === "yes",
    submitted_at: "",
  });
}
