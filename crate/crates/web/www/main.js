import init, { Demo } from "./pkg/advpocket_web.js";

const FIELD_RES = 96;
const MAP_RES = 32;
const CLASS_COLORS = [[66, 133, 244], [234, 67, 53], [52, 168, 83]];
const TERM_COLORS = { l1: "#1565c0", l2: "#c62828", l3: "#2e7d32", l4: "#6a1b9a" };

const $ = (id) => document.getElementById(id);
const field = $("field");
const ctx = field.getContext("2d");
let demo;
let background;
let overlay = null;
let selected = null;
let path = null;

function toCanvas([x, y]) {
  return [x * field.width, (1 - y) * field.height];
}

function sigma() {
  return parseFloat($("sigma").value);
}

function paintField() {
  const classes = demo.decisionField(FIELD_RES);
  const img = ctx.createImageData(FIELD_RES, FIELD_RES);
  classes.forEach((c, i) => {
    const [r, g, b] = CLASS_COLORS[c];
    img.data.set([r, g, b, 90], i * 4);
  });
  const off = new OffscreenCanvas(FIELD_RES, FIELD_RES);
  off.getContext("2d").putImageData(img, 0, 0);
  background = off;
}

function paintOverlay(values) {
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const img = new ImageData(MAP_RES, MAP_RES);
  values.forEach((v, i) => {
    const t = hi > lo ? (v - lo) / (hi - lo) : 0;
    img.data.set([255 * t, 120 * (1 - t), 255 * (1 - t), 150], i * 4);
  });
  const off = new OffscreenCanvas(MAP_RES, MAP_RES);
  off.getContext("2d").putImageData(img, 0, 0);
  overlay = { canvas: off, lo, hi };
}

function draw() {
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, field.width, field.height);
  ctx.drawImage(background, 0, 0, field.width, field.height);
  if (overlay) {
    ctx.imageSmoothingEnabled = true;
    ctx.drawImage(overlay.canvas, 0, 0, field.width, field.height);
  }
  if (path) {
    ctx.strokeStyle = "#111";
    ctx.lineWidth = 2;
    ctx.beginPath();
    path.forEach((p, i) => {
      const [cx, cy] = toCanvas(p);
      i ? ctx.lineTo(cx, cy) : ctx.moveTo(cx, cy);
    });
    ctx.stroke();
    const [ex, ey] = toCanvas(path[path.length - 1]);
    ctx.fillStyle = "#111";
    ctx.fillRect(ex - 4, ey - 4, 8, 8);
  }
  if (selected) {
    const [cx, cy] = toCanvas(selected);
    ctx.fillStyle = "#fff";
    ctx.strokeStyle = "#000";
    ctx.beginPath();
    ctx.arc(cx, cy, 6, 0, 2 * Math.PI);
    ctx.fill();
    ctx.stroke();
  }
}

function describe(p, label) {
  const r = JSON.parse(demo.inspect(p[0], p[1], sigma()));
  const probs = r.probs.map((v) => v.toFixed(3)).join(" ");
  return `${label} (${p[0].toFixed(3)}, ${p[1].toFixed(3)})  class ${r.prediction}  probs [${probs}]\n` +
    `  Δ ${r.delta.toFixed(4)}   K_t→${r.target} ${r.k_t.toFixed(2)}   K_u ${r.k_u.toFixed(2)}`;
}

function plotCurves(view) {
  const c = $("curves");
  const g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  const terms = Object.keys(TERM_COLORS).filter((k) => view[k].some((v) => v !== 0));
  const pad = 24;
  const rowH = (c.height - pad) / Math.max(terms.length, 1);
  terms.forEach((k, row) => {
    const ys = view[k];
    const lo = Math.min(...ys);
    const hi = Math.max(...ys);
    const top = row * rowH + 4;
    g.strokeStyle = TERM_COLORS[k];
    g.beginPath();
    ys.forEach((v, i) => {
      const x = pad + (i / Math.max(ys.length - 1, 1)) * (c.width - 2 * pad);
      const y = top + (hi > lo ? (1 - (v - lo) / (hi - lo)) : 0.5) * (rowH - 10);
      i ? g.lineTo(x, y) : g.moveTo(x, y);
    });
    g.stroke();
    g.fillStyle = TERM_COLORS[k];
    g.fillText(`${k.toUpperCase()}  ${ys[0].toFixed(3)} → ${ys[ys.length - 1].toFixed(3)}`, pad, top + 10);
  });
  $("legend").textContent = terms.length ? "each term scaled to its own range; step 0 is the clean point" : "";
}

function runAttack() {
  if (!selected) {
    $("readout").textContent = "click a starting point first";
    return;
  }
  const white = document.querySelector("input[name=mode]:checked").value === "white";
  const view = JSON.parse(demo.attack(
    selected[0], selected[1],
    parseInt($("target").value, 10),
    parseFloat($("lr").value),
    parseInt($("steps").value, 10),
    parseFloat($("tau").value),
    sigma(),
    white ? parseFloat($("lambda").value) : -1,
  ));
  path = view.path;
  draw();
  plotCurves(view);
  $("readout").textContent = describe(selected, "start") + "\n" +
    describe(path[path.length - 1], view.success ? "adversarial" : "end (failed)");
}

function drawMap() {
  const stat = $("statistic").value;
  $("readout").textContent = "computing map…";
  setTimeout(() => {
    paintOverlay(Array.from(demo.statisticField(stat, sigma(), MAP_RES)));
    draw();
    $("readout").textContent = `${stat} map: blue ${overlay.lo.toFixed(3)} … red ${overlay.hi.toFixed(3)}`;
  }, 10);
}

async function main() {
  await init();
  demo = new Demo(7, 2.0);
  paintField();
  draw();
  $("readout").textContent = `training accuracy ${demo.accuracy().toFixed(3)}; click a point`;
  field.addEventListener("click", (e) => {
    const rect = field.getBoundingClientRect();
    selected = [(e.clientX - rect.left) / rect.width, 1 - (e.clientY - rect.top) / rect.height];
    path = null;
    draw();
    $("readout").textContent = describe(selected, "point");
  });
  $("attack").addEventListener("click", runAttack);
  $("heatmap").addEventListener("click", drawMap);
  $("clear").addEventListener("click", () => { overlay = null; draw(); });
  $("sigma").addEventListener("input", () => { $("sigmaValue").textContent = sigma().toFixed(2); });
}

main().catch((e) => { $("readout").textContent = `failed to start: ${e}`; });
