/**
 * Evidence panel
 *
 * Entry form plus chips for the session's observations.  Values are
 * never free-typed: picking an instance and chain asks the server for
 * the legal value domain (GET /kb/{id}/resolve) and offers exactly
 * those.  Chips re-render from store state, which the store refreshes
 * from the server after every acknowledged mutation — a rejected
 * submission therefore leaves the chips untouched, and the rejection
 * is shown inline.
 */

import { ServiceError, SpookClient } from "./api.js";
import { MutationInFlight, SessionStore, UiSessionState } from "./state.js";

function esc(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export class EvidencePanel {
  private instanceSel!: HTMLSelectElement;
  private chainInput!: HTMLInputElement;
  private valueSel!: HTMLSelectElement;
  private addBtn!: HTMLButtonElement;
  private errorBox!: HTMLElement;
  private chipsBox!: HTMLElement;
  private unsubscribe: () => void;

  constructor(
    private root: HTMLElement,
    private client: SpookClient,
    private store: SessionStore,
    private kbId: string,
    instances: string[],
  ) {
    this.buildSkeleton(instances);
    this.unsubscribe = store.subscribe((s) => this.renderFromState(s));
    this.renderFromState(store.getState());
  }

  dispose(): void {
    this.unsubscribe();
  }

  private buildSkeleton(instances: string[]): void {
    this.root.innerHTML = `
      <form class="evidence-form">
        <select name="instance">
          <option value="" disabled selected>instance&hellip;</option>
          ${instances.map((i) => `<option value="${esc(i)}">${esc(i)}</option>`).join("")}
        </select>
        <input name="chain" type="text" placeholder="attribute chain" />
        <select name="value" disabled>
          <option value="" disabled selected>value&hellip;</option>
        </select>
        <button type="submit" disabled>observe</button>
      </form>
      <div class="inline-error" hidden></div>
      <div class="chips"></div>`;
    this.instanceSel = this.root.querySelector("select[name=instance]")!;
    this.chainInput = this.root.querySelector("input[name=chain]")!;
    this.valueSel = this.root.querySelector("select[name=value]")!;
    this.addBtn = this.root.querySelector("button")!;
    this.errorBox = this.root.querySelector(".inline-error")!;
    this.chipsBox = this.root.querySelector(".chips")!;

    const refresh = () => void this.refreshDomain();
    this.instanceSel.addEventListener("change", refresh);
    this.chainInput.addEventListener("change", refresh);
    this.root.querySelector("form")!.addEventListener("submit", (ev) => {
      ev.preventDefault();
      void this.submit();
    });
    this.chipsBox.addEventListener("click", (ev) => {
      const btn = (ev.target as HTMLElement).closest("button.retract");
      if (btn === null) return;
      void this.retract(
        btn.getAttribute("data-instance")!,
        btn.getAttribute("data-chain")!,
      );
    });
  }

  /** Asks the server for Dom(instance.chain) and repopulates the value list. */
  async refreshDomain(): Promise<void> {
    const instance = this.instanceSel.value;
    const chain = this.chainInput.value.trim();
    this.valueSel.innerHTML = `<option value="" disabled selected>value&hellip;</option>`;
    this.valueSel.disabled = true;
    this.addBtn.disabled = true;
    if (instance === "" || chain === "") return;
    try {
      const dom = await this.client.resolve(this.kbId, instance, chain);
      this.valueSel.innerHTML = dom.values
        .map((v) => `<option value="${esc(v)}">${esc(v)}</option>`)
        .join("");
      this.valueSel.disabled = false;
      this.addBtn.disabled = false;
      this.clearError();
    } catch (err) {
      this.showError(err);
    }
  }

  async submit(): Promise<void> {
    const item = {
      instance: this.instanceSel.value,
      chain: this.chainInput.value.trim(),
      value: this.valueSel.value,
    };
    try {
      await this.store.observe(item);
      this.clearError();
    } catch (err) {
      this.showError(err);
    }
  }

  async retract(instance: string, chain: string): Promise<void> {
    try {
      await this.store.retract(instance, chain);
      this.clearError();
    } catch (err) {
      this.showError(err);
    }
  }

  private renderFromState(s: UiSessionState): void {
    this.addBtn.disabled = s.pendingMutation || this.valueSel.disabled;
    this.chipsBox.innerHTML = s.evidence
      .map(
        (o) => `
      <span class="chip" data-instance="${esc(o.instance)}" data-chain="${esc(o.chain)}" data-value="${esc(o.value)}">
        ${esc(o.instance)}.${esc(o.chain)} = ${esc(o.value)}
        <button type="button" class="retract" data-instance="${esc(o.instance)}" data-chain="${esc(o.chain)}" title="retract">&times;</button>
      </span>`,
      )
      .join("");
  }

  private showError(err: unknown): void {
    let text: string;
    if (err instanceof ServiceError) {
      text = `${err.body.code}: ${err.body.message}`;
    } else if (err instanceof MutationInFlight) {
      text = err.message;
    } else {
      text = String(err);
    }
    this.errorBox.textContent = text;
    this.errorBox.hidden = false;
  }

  private clearError(): void {
    this.errorBox.textContent = "";
    this.errorBox.hidden = true;
  }
}
