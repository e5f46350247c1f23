/**
 * Model graph view
 *
 * Renders the GET /kb/{id}/graph document as a read-only structure
 * browser: class and instance nodes, is-a links, complex-attribute
 * edges with arity and inverse badges, and asserted filler bindings.
 * Purely a projection of the server document — nothing is derived
 * client-side beyond grouping and ordering for display.
 */

import { GraphEdge, GraphResponse, ServiceErrorBody } from "./api.js";

function esc(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function arityBadge(edge: GraphEdge): string {
  if (!edge.multi) return "";
  const bound = edge.bound == null ? "*" : String(edge.bound);
  return `<span class="badge arity">&times;${esc(bound)}</span>`;
}

function inverseBadge(edge: GraphEdge): string {
  if (edge.inverse == null) return "";
  return `<span class="badge inverse" title="inverse attribute">&#8646; ${esc(edge.inverse)}</span>`;
}

function edgeRow(edge: GraphEdge): string {
  const label = edge.attribute === undefined ? edge.kind : edge.attribute;
  const badges =
    edge.kind === "complex" ? ` ${arityBadge(edge)}${inverseBadge(edge)}` : "";
  return `
    <li class="edge ${esc(edge.kind)}" data-from="${esc(edge.from)}" data-to="${esc(edge.to)}">
      <span class="from">${esc(edge.from)}</span>
      <span class="attr">&mdash;${esc(label)}&rarr;</span>
      <span class="to">${esc(edge.to)}</span>${badges}
    </li>`;
}

export function renderModelGraph(root: HTMLElement, graph: GraphResponse): void {
  if (graph.nodes.length === 0) {
    root.innerHTML = `<p class="empty">This knowledge base is empty &mdash; no classes or instances to show.</p>`;
    return;
  }
  const classes = graph.nodes.filter((n) => n.kind === "class");
  const instances = graph.nodes.filter((n) => n.kind === "instance");
  const structural = graph.edges.filter(
    (e) => e.kind === "extends" || e.kind === "instance-of",
  );
  const complex = graph.edges.filter((e) => e.kind === "complex");
  const bindings = graph.edges.filter((e) => e.kind === "binding");

  root.innerHTML = `
    <div class="graph">
      <section class="nodes">
        <h3>Classes</h3>
        <ul>${classes
          .map(
            (n) =>
              `<li class="node class" data-name="${esc(n.name)}">${esc(n.name)}${
                n.extends ? ` <span class="isa">&sub; ${esc(n.extends)}</span>` : ""
              }</li>`,
          )
          .join("")}</ul>
        <h3>Instances</h3>
        <ul>${instances
          .map(
            (n) =>
              `<li class="node instance" data-name="${esc(n.name)}">${esc(n.name)} <span class="isa">: ${esc(
                n.class ?? "?",
              )}</span></li>`,
          )
          .join("")}</ul>
      </section>
      <section class="edges">
        <h3>Relations</h3>
        <ul>${complex.map(edgeRow).join("")}</ul>
        <h3>Is-a</h3>
        <ul>${structural.map(edgeRow).join("")}</ul>
        ${
          bindings.length
            ? `<h3>Asserted fillers</h3><ul>${bindings.map(edgeRow).join("")}</ul>`
            : ""
        }
      </section>
    </div>`;
}

/** Error banner for a failed graph fetch (stale kb id, unreachable server). */
export function renderGraphError(root: HTMLElement, err: ServiceErrorBody): void {
  root.innerHTML = `
    <div class="error-banner" role="alert">
      <strong>${esc(err.code)}</strong> ${esc(err.message)}
    </div>`;
}
