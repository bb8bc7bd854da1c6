import init, { grammar, explore, train, ndg } from "./pkg/rldf_wasm.js";

const TARGET = { frequency: "one", noun: "banana", density: "no", scene: "farm" };
const $ = (id) => document.getElementById(id);

function config(extra = {}) {
  return {
    environment: { terminal: TARGET, max_steps_per_episode: 100 },
    oracle: { kind: "simulated", embedding_dim: 128, locality_bandwidth: 10, ...(extra.oracle || {}) },
    reward: { kind: extra.reward || "multi_semantic" },
    agent: { algorithm: "q_learning", episodes: 300, ...(extra.agent || {}) },
    ndg: extra.ndg || {},
  };
}

function call(f, ...args) {
  $("error").textContent = "";
  try {
    return JSON.parse(f(...args));
  } catch (e) {
    $("error").textContent = e.message || String(e);
    return null;
  }
}

function row(tbody, cells) {
  const tr = document.createElement("tr");
  for (const c of cells) {
    const td = document.createElement("td");
    td.textContent = c;
    tr.appendChild(td);
  }
  tbody.appendChild(tr);
}

const fmt = (x) => (Number.isInteger(x) ? String(x) : x.toFixed(3));

// lattice explorer
let info;
let coords;

function renderAxes() {
  const box = $("axes");
  box.innerHTML = "";
  info.axes.slice(0, coords.length).forEach((axis, i) => {
    const label = document.createElement("label");
    label.textContent = axis.name;
    const sel = document.createElement("select");
    axis.vocabulary.forEach((term, j) => sel.add(new Option(term, j)));
    sel.value = coords[i];
    sel.onchange = () => {
      coords[i] = Number(sel.value);
      refresh();
    };
    label.appendChild(sel);
    box.appendChild(label);
  });
}

function refresh() {
  const v = call(explore, JSON.stringify(config()), Int32Array.from(coords));
  if (!v) return;
  $("here").textContent = v.state.prompt;
  $("here-reward").textContent = fmt(v.state.reward);
  $("here-distance").textContent = v.state.distance;
  const tbody = $("neighbours").querySelector("tbody");
  tbody.innerHTML = "";
  for (const n of v.neighbours) {
    row(tbody, [`${n.axis} ${n.direction > 0 ? "+1" : "-1"}`, n.prompt, fmt(n.reward), n.distance]);
    tbody.lastChild.style.cursor = "pointer";
    tbody.lastChild.onclick = () => {
      coords = n.coords.slice();
      renderAxes();
      refresh();
    };
  }
}

// training curve
function drawCurve(episodes) {
  const canvas = $("curve");
  const ctx = canvas.getContext("2d");
  const w = canvas.width;
  const h = canvas.height;
  ctx.clearRect(0, 0, w, h);
  const maxD = Math.max(1, ...episodes.map((e) => e.start_distance), ...episodes.map((e) => e.final_distance));
  const x = (i) => 30 + (i / Math.max(1, episodes.length - 1)) * (w - 40);
  const y = (d) => h - 20 - (d / maxD) * (h - 30);
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(30, 10);
  ctx.lineTo(30, h - 20);
  ctx.lineTo(w - 10, h - 20);
  ctx.stroke();
  ctx.fillStyle = "#555";
  ctx.fillText(String(maxD), 5, y(maxD) + 4);
  ctx.fillText("0", 15, y(0) + 4);
  ctx.fillText("final L1 distance per episode (blue), running mean of 20 (red)", 40, 12);
  const series = (values, color) => {
    ctx.strokeStyle = color;
    ctx.beginPath();
    values.forEach((v, i) => (i ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v))));
    ctx.stroke();
  };
  const finals = episodes.map((e) => e.final_distance);
  series(finals, "#4a7bd0");
  const mean = finals.map((_, i) => {
    const win = finals.slice(Math.max(0, i - 19), i + 1);
    return win.reduce((a, b) => a + b, 0) / win.length;
  });
  series(mean, "#d04a4a");
}

$("train").onclick = () => {
  const cfg = config({
    reward: $("train-reward").value,
    agent: {
      algorithm: $("agent").value,
      epsilon: Number($("epsilon").value),
      episodes: Number($("episodes").value),
      seed: Number($("seed").value),
    },
    oracle: { seed: Number($("seed").value) },
  });
  const t = call(train, JSON.stringify(cfg));
  if (!t) return;
  drawCurve(t.episodes);
  const s = t.statistics;
  $("train-summary").textContent = s
    ? `D_T ${s.d_t}, D_min ${s.d_min}, D_max ${s.d_max}, converged ${s.conv}, oracle calls ${t.oracle_calls}. Greedy path from a fixed start:`
    : "no episodes";
  const ol = $("greedy");
  ol.innerHTML = "";
  for (const p of t.greedy_path) {
    const li = document.createElement("li");
    li.textContent = p.prompt;
    ol.appendChild(li);
  }
};

// noisy diffusion gradient
$("run-ndg").onclick = () => {
  const seed = Number($("ndg-seed").value);
  const cfg = config({
    reward: $("ndg-reward").value,
    oracle: { seed, noise_swap_prob: Number($("noise").value) },
    ndg: { seed },
  });
  const r = call(ndg, JSON.stringify(cfg));
  if (!r) return;
  $("ndg-summary").textContent = `status ${r.status} after ${r.iterations} iterations, ${r.oracle_calls} generations`;
  const tbody = $("ndg-path").querySelector("tbody");
  tbody.innerHTML = "";
  r.path.forEach((p, i) => row(tbody, [i, p.prompt, fmt(p.reward), p.distance]));
};

await init();
info = call(grammar, JSON.stringify(config()));
coords = [1, 3, 2, 5];
const target = call(explore, JSON.stringify(config()), Int32Array.from([0, 0, 0, 0]));
$("target").textContent = target ? target.state.prompt : "";
renderAxes();
refresh();
