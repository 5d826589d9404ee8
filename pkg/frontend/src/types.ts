/** Wire types mirroring the review API. The UI renders these verbatim and
 * never derives domain facts (allowed labels, type options, flags,
 * validation verdicts) on its own. */

export interface JobSummary {
  job_id: string;
  source: string;
  stage: string;
  review_mode: string;
  passages: number;
  entities: number;
  pairs: number;
  relationships: number;
  flags: string[];
  version: number;
}

export interface Passage {
  passage_id: string;
  heading: string | null;
  text: string;
  order: number;
  char_offset: number;
}

export interface SpanRef {
  passage_id: string;
  start: number;
  end: number;
}

export interface EntityItem {
  local_id: string;
  name: string;
  entity_type: string | null;
  subtype: string | null;
  spans: SpanRef[];
  aliases: string[];
  origin: string;
  flags: string[];
}

export interface PairItem {
  pair_id: string;
  source_id: string;
  target_id: string;
  source_name: string;
  target_name: string;
  labels: string[];
  allowed_labels: string[];
  passage_id: string | null;
  verdict: string;
  flags: string[];
}

export interface RelationshipItem {
  rel_id: string;
  source_id: string;
  target_id: string;
  source_name: string;
  target_name: string;
  label: string;
  allowed_labels: string[];
  provenance: string | null;
  review_state: string;
}

export interface StageItems {
  job_id: string;
  stage: string;
  version: number;
  kind: "entities" | "pairs" | "relationships" | "none";
  items: EntityItem[] | PairItem[] | RelationshipItem[];
  entity_type_options: string[];
  subtype_options: string[];
}

export interface ReviewActionDraft {
  kind: "add" | "delete" | "alter";
  target?: string;
  payload?: Record<string, unknown>;
}

export interface GraphNode {
  id: string;
  name: string;
  entity_type: string | null;
  pattern?: string | null;
}

export interface GraphEdge {
  id?: string;
  source: string;
  target: string;
  label: string;
}

export interface GraphView {
  nodes: GraphNode[];
  edges: GraphEdge[];
}

export interface ApiErrorBody {
  code: string;
  message: string;
  details: Record<string, unknown>;
}
