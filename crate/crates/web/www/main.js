import init, { Demo } from "./pkg/adn_web.js";

const $ = (id) => document.getElementById(id);
const SVG = "http://www.w3.org/2000/svg";
let demo;
let losses = [];

function call(json) {
  const v = JSON.parse(json);
  if (v && v.error) throw new Error(v.error);
  return v;
}

function report(el, fn) {
  try {
    el.classList.remove("error");
    fn();
  } catch (e) {
    el.textContent = e.message;
    el.classList.add("error");
  }
}

function svgEl(name, attrs) {
  const el = document.createElementNS(SVG, name);
  for (const [k, v] of Object.entries(attrs)) el.setAttribute(k, v);
  return el;
}

function scale(lo, hi, a, b) {
  const span = hi - lo || 1;
  return (v) => a + ((v - lo) / span) * (b - a);
}

function reset() {
  demo = new Demo(BigInt($("seed").value || 0));
  losses = [];
  $("train-status").textContent = "Fresh network.";
  $("loss-plot").replaceChildren();
  $("subnet-table").tBodies[0].replaceChildren();
  $("pareto-plot").replaceChildren();
  buildToggles(demo.stages);
}

function plotLosses() {
  const svg = $("loss-plot");
  svg.replaceChildren();
  const w = +svg.getAttribute("width"), h = +svg.getAttribute("height");
  const all = losses.flatMap((r) => [r.loss_super, r.loss_base]);
  const x = scale(0, Math.max(losses.length - 1, 1), 30, w - 10);
  const y = scale(0, Math.max(...all), h - 20, 10);
  for (const [key, color] of [["loss_super", "#4a78b5"], ["loss_base", "#e0913a"]]) {
    const pts = losses.map((r, i) => `${x(i)},${y(r[key])}`).join(" ");
    svg.append(svgEl("polyline", { points: pts, fill: "none", stroke: color, "stroke-width": 1.5 }));
  }
  const legend = svgEl("text", { x: 35, y: h - 5, "font-size": 11 });
  legend.textContent = "blue: super-net loss   orange: base-net loss";
  svg.append(legend);
}

function train() {
  report($("train-status"), () => {
    const n = Math.max(1, Math.min(500, +$("nsteps").value || 1));
    const r = call(demo.train_steps(n));
    losses.push(...r.steps);
    plotLosses();
    const pct = (v) => (100 * v).toFixed(1) + "%";
    $("train-status").textContent =
      `${demo.steps} steps. Super-net ${pct(r.acc_supernet)}, base-net ${pct(r.acc_basenet)}.`;
  });
}

function evaluateAll() {
  report($("train-status"), () => {
    const rows = call(demo.subnets());
    const body = $("subnet-table").tBodies[0];
    body.replaceChildren();
    for (const r of rows) {
      const tr = document.createElement("tr");
      if (r.pareto) tr.className = "pareto";
      for (const v of [r.skip, (r.flops / 1e6).toFixed(2), r.params, (100 * r.top1).toFixed(1) + "%", r.pareto ? "yes" : ""]) {
        const td = document.createElement("td");
        td.textContent = v;
        tr.append(td);
      }
      body.append(tr);
    }
    plotPareto(rows);
  });
}

function plotPareto(rows) {
  const svg = $("pareto-plot");
  svg.replaceChildren();
  const w = +svg.getAttribute("width"), h = +svg.getAttribute("height");
  const fl = rows.map((r) => r.flops), acc = rows.map((r) => r.top1);
  const x = scale(Math.min(...fl), Math.max(...fl), 40, w - 40);
  const y = scale(Math.min(...acc), Math.max(...acc), h - 30, 20);
  const front = rows.filter((r) => r.pareto);
  svg.append(svgEl("polyline", {
    points: front.map((r) => `${x(r.flops)},${y(r.top1)}`).join(" "),
    fill: "none", stroke: "#4a78b5",
  }));
  for (const r of rows) {
    const c = svgEl("circle", { cx: x(r.flops), cy: y(r.top1), r: 4, fill: r.pareto ? "#4a78b5" : "#bbb" });
    const t = svgEl("title", {});
    t.textContent = `${r.skip}: ${(100 * r.top1).toFixed(1)}%, ${(r.flops / 1e6).toFixed(2)} MFLOPs`;
    c.append(t);
    svg.append(c);
  }
  const label = svgEl("text", { x: w / 2 - 40, y: h - 8, "font-size": 11 });
  label.textContent = "FLOPs →   (y: top-1)";
  svg.append(label);
}

function buildToggles(stages) {
  const box = $("toggles");
  box.replaceChildren();
  for (let s = 0; s < stages; s++) {
    const l = document.createElement("label");
    const cb = document.createElement("input");
    cb.type = "checkbox";
    cb.dataset.stage = s;
    l.append(cb, ` stage ${s + 1} `);
    box.append(l);
  }
}

function inspect() {
  report($("inspect-summary"), () => {
    const skip = [...$("toggles").querySelectorAll("input")].map((c) => (c.checked ? "T" : "F")).join("");
    const r = call(demo.inspect(skip));
    const fmt = (v) => (v == null ? "n/a" : v.toFixed(3));
    $("inspect-summary").textContent =
      `${r.skip}: top-1 ${(100 * r.top1).toFixed(1)}%, ${(r.flops / 1e6).toFixed(2)} MFLOPs, ${r.params} params. ` +
      `Mean residual ratio: mandatory ${fmt(r.mandatory_mean)}, skippable ${fmt(r.skippable_mean)}.`;
    const bars = $("ratio-bars");
    bars.replaceChildren();
    const max = Math.max(...r.blocks.map((b) => b.ratio), 1e-9);
    for (const b of r.blocks) {
      const row = document.createElement("div");
      row.className = "bar";
      const fill = document.createElement("span");
      fill.className = "fill " + (b.skippable ? "skippable" : "mandatory");
      fill.style.width = `${(240 * b.ratio) / max}px`;
      row.append(`stage ${b.stage + 1} block ${b.block + 1}`, fill, b.ratio.toFixed(3));
      bars.append(row);
    }
  });
}

await init();
$("reset").onclick = reset;
$("train").onclick = train;
$("evaluate").onclick = evaluateAll;
$("inspect").onclick = inspect;
reset();
