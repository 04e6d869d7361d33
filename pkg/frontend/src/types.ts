// Wire types mirroring the review service API (snake_case as served).

export interface Detection {
  category: string;
  conf: number;
  bbox: [number, number, number, number]; // normalized [x, y, w, h]
}

export interface ReviewItem {
  image_id: string;
  file: string;
  detections: Detection[];
  max_conf: number;
  band: number;
  status: "pending" | "reviewed";
}

export interface QueuePage {
  total: number;
  offset: number;
  limit: number;
  items: ReviewItem[];
}

export interface ImageDetail {
  image_id: string;
  file: string;
  width: number;
  height: number;
  location: string;
  max_detection_conf: number;
  detections: Detection[];
  status: string;
  species_labels: string[];
}

export type Decision = "confirm" | "reject" | "relabel";

export interface VerdictDraft {
  image_id: string;
  decision: Decision;
  detection_index?: number | null;
  species?: string | null;
  reviewer?: string;
}

export interface StoredVerdict extends VerdictDraft {
  verdict_id: number;
  at: string;
}

export interface ClusterMember {
  file: string;
  index: number;
  bbox: [number, number, number, number];
  conf: number;
}

export interface Cluster {
  cluster_id: string;
  location: string;
  representative_bbox: [number, number, number, number];
  members: ClusterMember[];
  distinct_image_count: number;
  consecutive: boolean;
  status: "pending" | "allowlisted" | "suppress";
}

export interface Category {
  id: number;
  name: string;
}
