/** Node-link rendering of the bundle graph.
 *
 * Layout is a deterministic circle (nodes in server order), so snapshots and
 * tests are stable. Above CLUSTER_THRESHOLD nodes the view falls back to one
 * cluster node per entity type to stay legible. Colors keyed by entity type
 * are presentation only; every node, edge and label string comes from the
 * server payload untouched.
 */

import type { GraphEdge, GraphNode, GraphView } from "./types.js";

export const CLUSTER_THRESHOLD = 200;

const TYPE_COLORS: Record<string, string> = {
  ATTACK_PATTERN: "#c0392b",
  CAMPAIGN: "#8e44ad",
  COURSE_OF_ACTION: "#16a085",
  IDENTITY: "#2980b9",
  INDICATOR: "#f39c12",
  INFRASTRUCTURE: "#7f8c8d",
  LOCATION: "#27ae60",
  MALWARE: "#d35400",
  THREAT_ACTOR: "#2c3e50",
  TOOL: "#3498db",
  VULNERABILITY: "#e74c3c",
};

export function colorFor(entityType: string | null): string {
  return (entityType && TYPE_COLORS[entityType]) || "#555555";
}

export interface PlacedNode extends GraphNode {
  x: number;
  y: number;
  clusterSize?: number;
}

export interface Layout {
  nodes: PlacedNode[];
  edges: GraphEdge[];
  clustered: boolean;
}

export function layoutGraph(view: GraphView, width = 800, height = 600): Layout {
  const clustered = view.nodes.length > CLUSTER_THRESHOLD;
  const nodes = clustered ? clusterByType(view).nodes : view.nodes;
  const edges = clustered ? clusterByType(view).edges : view.edges;
  const cx = width / 2;
  const cy = height / 2;
  const radius = Math.max(60, Math.min(width, height) / 2 - 80);
  const placed = nodes.map((node, index) => {
    const angle = (2 * Math.PI * index) / Math.max(1, nodes.length);
    return {
      ...node,
      x: Math.round(cx + radius * Math.cos(angle)),
      y: Math.round(cy + radius * Math.sin(angle)),
    };
  });
  return { nodes: placed, edges, clustered };
}

/** Pagination/legibility fallback: one node per entity type, edges folded
 * into type-to-type links with mention counts in the label. */
export function clusterByType(view: GraphView): GraphView & {
  nodes: (GraphNode & { clusterSize: number })[];
} {
  const groups = new Map<string, GraphNode[]>();
  for (const node of view.nodes) {
    const key = node.entity_type ?? "UNTYPED";
    const bucket = groups.get(key) ?? [];
    bucket.push(node);
    groups.set(key, bucket);
  }
  const nodes = [...groups.entries()].map(([key, members]) => ({
    id: `cluster:${key}`,
    name: `${key} (${members.length})`,
    entity_type: key,
    clusterSize: members.length,
  }));
  const typeOf = new Map(view.nodes.map((node) => [node.id, node.entity_type ?? "UNTYPED"]));
  const folded = new Map<string, GraphEdge & { count: number }>();
  for (const edge of view.edges) {
    const source = `cluster:${typeOf.get(edge.source) ?? "UNTYPED"}`;
    const target = `cluster:${typeOf.get(edge.target) ?? "UNTYPED"}`;
    const key = `${source}|${edge.label}|${target}`;
    const existing = folded.get(key);
    if (existing) {
      existing.count += 1;
      existing.label = `${existing.label.replace(/ x\d+$/, "")} x${existing.count}`;
    } else {
      folded.set(key, { source, target, label: edge.label, count: 1 });
    }
  }
  return { nodes, edges: [...folded.values()], clustered: true } as never;
}

const SVG_NS = "http://www.w3.org/2000/svg";

export function renderGraph(
  container: HTMLElement,
  view: GraphView,
  onNodeClick?: (node: GraphNode) => void,
): SVGSVGElement {
  const { nodes, edges, clustered } = layoutGraph(view);
  const doc = container.ownerDocument;
  const svg = doc.createElementNS(SVG_NS, "svg") as SVGSVGElement;
  svg.setAttribute("viewBox", "0 0 800 600");
  svg.setAttribute("class", clustered ? "graph graph-clustered" : "graph");
  const byId = new Map(nodes.map((node) => [node.id, node]));

  for (const edge of edges) {
    const source = byId.get(edge.source);
    const target = byId.get(edge.target);
    if (!source || !target) continue;
    const line = doc.createElementNS(SVG_NS, "line");
    line.setAttribute("x1", String(source.x));
    line.setAttribute("y1", String(source.y));
    line.setAttribute("x2", String(target.x));
    line.setAttribute("y2", String(target.y));
    line.setAttribute("class", "graph-edge");
    line.setAttribute("data-label", edge.label);
    svg.appendChild(line);
    const label = doc.createElementNS(SVG_NS, "text");
    label.setAttribute("x", String((source.x + target.x) / 2));
    label.setAttribute("y", String((source.y + target.y) / 2 - 4));
    label.setAttribute("class", "graph-edge-label");
    label.textContent = edge.label;
    svg.appendChild(label);
  }

  for (const node of nodes) {
    const group = doc.createElementNS(SVG_NS, "g");
    group.setAttribute("class", "graph-node");
    group.setAttribute("data-node-id", node.id);
    group.setAttribute("data-entity-type", node.entity_type ?? "");
    const circle = doc.createElementNS(SVG_NS, "circle");
    circle.setAttribute("cx", String(node.x));
    circle.setAttribute("cy", String(node.y));
    circle.setAttribute("r", node.clusterSize ? String(14 + Math.min(16, node.clusterSize)) : "14");
    circle.setAttribute("fill", colorFor(node.entity_type));
    group.appendChild(circle);
    const label = doc.createElementNS(SVG_NS, "text");
    label.setAttribute("x", String(node.x));
    label.setAttribute("y", String(node.y + 28));
    label.setAttribute("text-anchor", "middle");
    label.setAttribute("class", "graph-node-label");
    label.textContent = node.name;
    group.appendChild(label);
    if (onNodeClick) {
      group.addEventListener("click", () => onNodeClick(node));
    }
    svg.appendChild(group);
  }

  container.replaceChildren(svg);
  return svg;
}
