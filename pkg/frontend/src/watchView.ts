/**
 * Watch view
 *
 * Horizontal posterior bars for every watched target plus the session's
 * history timeline.  Every number shown is a server response value: the
 * bar label is the raw probability to four decimals and each bar carries
 * the unrounded value in a data attribute so round-trip checks can
 * compare against response payloads exactly.
 */

import { QueryResponse } from "./api.js";
import { TimelineStep } from "./state.js";

function esc(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function barRow(value: string, p: number): string {
  const pct = (p * 100).toFixed(1);
  return `
    <div class="bar-row" data-value="${esc(value)}" data-p="${String(p)}">
      <span class="value-label">${esc(value)}</span>
      <span class="track"><span class="fill" style="width:${pct}%"></span></span>
      <span class="prob">${p.toFixed(4)}</span>
    </div>`;
}

export function renderPosteriorBars(
  root: HTMLElement,
  watched: string[],
  posteriors: Record<string, QueryResponse>,
): void {
  if (watched.length === 0) {
    root.innerHTML = `<p class="empty">No watched targets. Add one to see its posterior.</p>`;
    return;
  }
  root.innerHTML = watched
    .map((target) => {
      const resp = posteriors[target];
      if (resp === undefined) {
        return `<section class="watch" data-target="${esc(target)}">
          <h3>${esc(target)}</h3><p class="pending">waiting for first response&hellip;</p>
        </section>`;
      }
      const rows = Object.entries(resp.posterior)
        .map(([v, p]) => barRow(v, p))
        .join("");
      return `<section class="watch" data-target="${esc(target)}">
        <h3>${esc(target)}</h3>
        ${rows}
        <p class="meta">${esc(resp.backend)} &middot; ${resp.seconds.toFixed(3)}s</p>
      </section>`;
    })
    .join("");
}

export function renderTimeline(root: HTMLElement, steps: TimelineStep[]): void {
  if (steps.length === 0) {
    root.innerHTML = `<p class="empty">No steps yet.</p>`;
    return;
  }
  root.innerHTML = `<ol class="timeline">${steps
    .map((step) => {
      const lines = Object.entries(step.posteriors)
        .map(([target, posterior]) => {
          const cells = Object.entries(posterior)
            .map(
              ([v, p]) =>
                `<span class="cell" data-value="${esc(v)}" data-p="${String(p)}">${esc(v)} ${p.toFixed(4)}</span>`,
            )
            .join(" ");
          return `<div class="step-target" data-target="${esc(target)}"><span class="target">${esc(target)}</span> ${cells}</div>`;
        })
        .join("");
      return `<li class="step"><span class="delta">${esc(step.delta)}</span>${lines}</li>`;
    })
    .join("")}</ol>`;
}
