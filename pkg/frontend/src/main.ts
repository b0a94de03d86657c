/** Browser entry point: wire the app to the service that serves this bundle.
 *
 * The rater identity comes from ?rater=ID in the page URL so one deployment
 * serves every rater; a missing id shows a prompt instead of guessing.
 */
import { ReviewApi } from "./api.js";
import { ReviewApp } from "./app.js";
import { CardController } from "./card.js";

function boot(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app element");
  const raterId = new URLSearchParams(window.location.search).get("rater");
  if (!raterId) {
    root.textContent =
      "Open this page with ?rater=YOUR_ID to start reviewing (e.g. /?rater=r1).";
    return;
  }
  const api = new ReviewApi(window.location.origin);
  const app = new ReviewApp(root, new CardController(api, raterId));
  app.mount();
}

if (document.readyState === "loading") {
  document.addEventListener("DOMContentLoaded", boot);
} else {
  boot();
}
