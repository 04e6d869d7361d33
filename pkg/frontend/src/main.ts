// Single-page review app: keyboard-first queue work plus a cluster
// adjudication mode. One keystroke per verdict is the whole point.
//
// Keys: c confirm, x reject, l relabel (then a digit picks the species),
// n/j next, p/k previous, m toggle cluster mode, r reload image,
// in cluster mode: a allowlist, s suppress.

import { ApiClient } from "./api.js";
import { ClusterReview, mosaicTiles } from "./clusters.js";
import { drawOverlay, drawPlaceholder } from "./overlay.js";
import { QueueView } from "./queue.js";
import type { Category } from "./types.js";

const CANVAS_W = 960;
const CANVAS_H = 640;

const api = new ApiClient((input, init) => fetch(input, init));
const queue = new QueueView(api);
const clusters = new ClusterReview(api);
let categories: Category[] = [];
let relabelArmed = false;

const canvas = document.getElementById("viewer") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const statusLine = document.getElementById("status")!;
const infoLine = document.getElementById("info")!;
const clusterPane = document.getElementById("clusters")!;

async function start(): Promise<void> {
  categories = await api.categories();
  await queue.load();
  render();
}

function speciesChoices(): string[] {
  return categories.filter((c) => c.id !== 0).map((c) => c.name);
}

async function render(): Promise<void> {
  if (queue.clusterMode) {
    renderClusters();
    return;
  }
  clusterPane.innerHTML = "";
  const item = queue.current;
  if (!item) {
    infoLine.textContent = "queue empty";
    drawPlaceholder(ctx, CANVAS_W, CANVAS_H);
    return;
  }
  infoLine.textContent =
    `${queue.index + 1}/${queue.items.length} ${item.file} ` +
    `conf ${item.max_conf.toFixed(4)} [${item.status}]`;
  const image = await loadImage(`/media/${item.file}`);
  if (image) {
    drawOverlay(ctx, image, item.detections, CANVAS_W, CANVAS_H);
  } else {
    drawPlaceholder(ctx, CANVAS_W, CANVAS_H);
    drawOverlay(ctx, null, item.detections, CANVAS_W, CANVAS_H);
  }
  showStatus();
}

function renderClusters(): void {
  const cluster = clusters.current;
  drawPlaceholder(ctx, CANVAS_W, CANVAS_H);
  if (!cluster) {
    clusterPane.innerHTML = "<p>no suspicious clusters</p>";
    return;
  }
  const tiles = mosaicTiles(cluster).slice(0, 24);
  clusterPane.innerHTML =
    `<h3>${cluster.cluster_id} (${cluster.distinct_image_count} images, ` +
    `${cluster.status})</h3>` +
    tiles
      .map(
        (tile) =>
          `<div class="tile"><img src="${tile.mediaUrl}" loading="lazy" ` +
          `alt="${tile.file}"></div>`,
      )
      .join("");
  infoLine.textContent =
    `cluster ${clusters.index + 1}/${clusters.clusters.length} at ${cluster.location} ` +
    `(a allowlist / s suppress)`;
  showStatus();
}

function showStatus(): void {
  const parts: string[] = [];
  const error = queue.clusterMode ? clusters.lastError : queue.lastError;
  if (error) parts.push(`error: ${error}`);
  if (api.pendingVerdicts > 0) parts.push(`${api.pendingVerdicts} verdict(s) queued for retry`);
  if (relabelArmed) {
    parts.push(`relabel: ${speciesChoices().map((s, i) => `${i + 1}=${s}`).join(" ")}`);
  }
  statusLine.textContent = parts.join(" | ");
}

function loadImage(url: string): Promise<HTMLImageElement | null> {
  return new Promise((resolve) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => resolve(null);
    img.src = url;
  });
}

async function handleKey(event: KeyboardEvent): Promise<void> {
  const key = event.key.toLowerCase();
  if (relabelArmed && /^[1-9]$/.test(key)) {
    const species = speciesChoices()[Number(key) - 1];
    relabelArmed = false;
    if (species) await queue.submit("relabel", null, species);
    await render();
    return;
  }
  relabelArmed = false;
  if (queue.clusterMode) {
    if (key === "a") await clusters.adjudicate("allowlist");
    else if (key === "s") await clusters.adjudicate("suppress");
    else if (key === "n" || key === "j") clusters.index = Math.min(clusters.index + 1, clusters.clusters.length - 1);
    else if (key === "p" || key === "k") clusters.index = Math.max(clusters.index - 1, 0);
    else if (key === "m") queue.clusterMode = false;
    await render();
    return;
  }
  switch (key) {
    case "c":
      await queue.submit("confirm");
      break;
    case "x":
      await queue.submit("reject");
      break;
    case "l":
      relabelArmed = true;
      break;
    case "n":
    case "j":
      queue.advance();
      break;
    case "p":
    case "k":
      queue.back();
      break;
    case "r":
      break; // fall through to render: reloads the image
    case "m":
      queue.clusterMode = true;
      await clusters.load();
      break;
  }
  await render();
}

document.addEventListener("keydown", (event) => {
  void handleKey(event);
});

// retry any buffered verdicts when connectivity returns
window.addEventListener("online", () => {
  void api.flush().then(() => render());
});
setInterval(() => {
  if (api.pendingVerdicts > 0) void api.flush().then(() => render());
}, 3000);

void start();
