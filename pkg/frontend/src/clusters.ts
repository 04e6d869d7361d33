// Repeat-detection cluster adjudication: list suspicious clusters, show a
// mosaic of member crops, record suppress/allowlist decisions.

import type { ApiClient } from "./api.js";
import type { Cluster, ClusterMember } from "./types.js";

export interface MosaicTile {
  file: string;
  mediaUrl: string;
  // crop the member box out of the source image, padded for context
  crop: { x: number; y: number; w: number; h: number };
}

export function mosaicTiles(cluster: Cluster, pad = 0.5): MosaicTile[] {
  return cluster.members.map((member: ClusterMember) => {
    const [x, y, w, h] = member.bbox;
    const cx = x + w / 2;
    const cy = y + h / 2;
    const side = Math.max(w, h) * (1 + pad);
    const left = Math.min(Math.max(cx - side / 2, 0), 1);
    const top = Math.min(Math.max(cy - side / 2, 0), 1);
    return {
      file: member.file,
      mediaUrl: `/media/${member.file}`,
      crop: { x: left, y: top, w: Math.min(side, 1 - left), h: Math.min(side, 1 - top) },
    };
  });
}

export class ClusterReview {
  clusters: Cluster[] = [];
  index = 0;
  lastError: string | null = null;

  constructor(private readonly api: ApiClient) {}

  get current(): Cluster | null {
    return this.clusters[this.index] ?? null;
  }

  get pending(): Cluster[] {
    return this.clusters.filter((c) => c.status === "pending");
  }

  async load(): Promise<void> {
    this.clusters = await this.api.clusters();
    this.index = 0;
  }

  async adjudicate(decision: "suppress" | "allowlist"): Promise<boolean> {
    const cluster = this.current;
    if (!cluster) return false;
    this.lastError = null;
    try {
      const result = await this.api.resolveCluster(cluster.cluster_id, decision === "allowlist");
      cluster.status = result.status as Cluster["status"];
      if (this.index < this.clusters.length - 1) this.index += 1;
      return true;
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
      return false;
    }
  }
}
