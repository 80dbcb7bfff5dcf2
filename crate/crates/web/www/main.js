import init, { Explorer, shuffle_plan, compare_runs } from "./pkg/ltfb_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

const PARAM_NAMES = ["drive", "shape 1", "shape 2", "shape 3", "shape 4"];
const SHARD_COLORS = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948",
  "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"];

function setupExplorer() {
  const ex = new Explorer(1, "desk");
  const params = [0.5, 0.5, 0.5, 0.5, 0.5];
  const scale = 6;
  const canvases = [];
  for (let v = 0; v < ex.views(); v++) {
    for (let c = 0; c < ex.channels(); c++) {
      const cv = document.createElement("canvas");
      cv.width = ex.width();
      cv.height = ex.height();
      cv.style.width = `${ex.width() * scale}px`;
      cv.style.height = `${ex.height() * scale}px`;
      cv.title = `view ${v}, channel ${c}`;
      $("images").appendChild(cv);
      canvases.push(cv);
    }
  }

  function draw() {
    const img = ex.images(Float64Array.from(params));
    const plane = ex.width() * ex.height();
    let max = 0;
    for (const v of img) max = Math.max(max, v);
    canvases.forEach((cv, i) => {
      const ctx = cv.getContext("2d");
      const data = ctx.createImageData(cv.width, cv.height);
      for (let p = 0; p < plane; p++) {
        const g = Math.round(255 * img[i * plane + p] / (max || 1));
        data.data.set([g, g, Math.min(255, g + 30), 255], 4 * p);
      }
      ctx.putImageData(data, 0, 0);
    });
    const s = ex.scalars(Float64Array.from(params));
    $("scalars").textContent = "scalars: " + Array.from(s, (v) => v.toFixed(3)).join("  ");
  }

  PARAM_NAMES.forEach((name, i) => {
    const row = document.createElement("div");
    row.className = "row";
    row.innerHTML = `<label>${name}</label><input type="range" min="0" max="1" step="0.01" value="0.5"> <span>0.50</span>`;
    const input = row.querySelector("input");
    const out = row.querySelector("span");
    input.addEventListener("input", () => {
      params[i] = Number(input.value);
      out.textContent = params[i].toFixed(2);
      draw();
    });
    $("sliders").appendChild(row);
  });
  draw();
}

function drawPlan() {
  const shards = num("p-shards");
  const plan = JSON.parse(shuffle_plan(num("p-n"), num("p-file"), shards, num("p-batch"),
    num("p-seed"), num("p-epoch")));
  const cv = $("plan");
  const ctx = cv.getContext("2d");
  const cols = plan.steps.length;
  const perShard = Math.max(...plan.steps.map((st) => {
    const counts = new Array(shards).fill(0);
    st.forEach(([, , to]) => counts[to]++);
    return Math.max(...counts);
  }));
  const cell = Math.max(2, Math.min(14, Math.floor((cv.width - 40) / (cols * (perShard + 1)))));
  cv.height = shards * (cell + 6) + 20;
  ctx.clearRect(0, 0, cv.width, cv.height);
  ctx.font = "11px sans-serif";
  for (let s = 0; s < shards; s++) {
    ctx.fillStyle = "#333";
    ctx.fillText(`s${s}`, 2, s * (cell + 6) + cell);
  }
  let moved = 0;
  let total = 0;
  plan.steps.forEach((st, step) => {
    const fill = new Array(shards).fill(0);
    const x0 = 30 + step * (perShard + 1) * cell;
    st.forEach(([, from, to]) => {
      ctx.fillStyle = SHARD_COLORS[from % SHARD_COLORS.length];
      ctx.fillRect(x0 + fill[to] * cell, to * (cell + 6), cell - 1, cell);
      fill[to]++;
      total++;
      if (from !== to) moved++;
    });
  });
  $("plan-stats").textContent =
    `${plan.files} files, ${cols} minibatches, ${total} samples delivered, ` +
    `${moved} moved between shards, ${total - moved} consumed by their owner.`;
}

function drawCurves(result) {
  const cv = $("curves");
  const ctx = cv.getContext("2d");
  const arms = [["ltfb", "#c0392b"], ["k_independent", "#2c3e50"]];
  const bestAt = (evals) => {
    const m = new Map();
    for (const [step, , v] of evals) m.set(step, Math.min(m.get(step) ?? Infinity, v));
    return [...m.entries()].sort((a, b) => a[0] - b[0]);
  };
  const series = arms.map(([k]) => bestAt(result[k].evals));
  const all = series.flat();
  const xMax = Math.max(...all.map((p) => p[0]));
  const yMin = Math.min(...all.map((p) => p[1])) * 0.95;
  const yMax = Math.max(...all.map((p) => p[1])) * 1.05;
  const pad = 45;
  const X = (x) => pad + (x / xMax) * (cv.width - 2 * pad);
  const Y = (y) => cv.height - pad - ((y - yMin) / (yMax - yMin || 1)) * (cv.height - 2 * pad);
  ctx.clearRect(0, 0, cv.width, cv.height);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, cv.width - 2 * pad, cv.height - 2 * pad);
  ctx.fillStyle = "#333";
  ctx.font = "11px sans-serif";
  ctx.fillText(yMax.toFixed(3), 2, pad + 4);
  ctx.fillText(yMin.toFixed(3), 2, cv.height - pad);
  ctx.fillText("step " + xMax, cv.width - pad - 40, cv.height - pad + 16);
  ctx.strokeStyle = "#eee";
  for (const step of result.ltfb.rounds) {
    ctx.beginPath();
    ctx.moveTo(X(step), pad);
    ctx.lineTo(X(step), cv.height - pad);
    ctx.stroke();
  }
  arms.forEach(([name, color], i) => {
    ctx.strokeStyle = color;
    ctx.lineWidth = 2;
    ctx.beginPath();
    series[i].forEach(([x, y], j) => (j ? ctx.lineTo(X(x), Y(y)) : ctx.moveTo(X(x), Y(y))));
    ctx.stroke();
    ctx.fillStyle = color;
    ctx.fillText(name.replace("_", "-"), cv.width - pad - 90, pad + 16 + 14 * i);
  });
  $("curve-stats").textContent =
    `LTFB best ${result.ltfb.best_metric.toFixed(4)} (trainer ${result.ltfb.best}, ` +
    `${result.ltfb.adoptions} adoptions over ${result.ltfb.rounds.length} rounds); ` +
    `K-independent best ${result.k_independent.best_metric.toFixed(4)} ` +
    `(trainer ${result.k_independent.best}).`;
}

function runComparison() {
  $("status").textContent = "training...";
  $("c-go").disabled = true;
  // let the page repaint before the blocking call
  setTimeout(() => {
    try {
      const res = JSON.parse(compare_runs(num("c-n"), num("c-k"), num("c-steps"), num("c-int"),
        num("c-seed")));
      drawCurves(res);
      $("status").textContent = "";
    } catch (e) {
      $("status").textContent = String(e);
    }
    $("c-go").disabled = false;
  }, 30);
}

await init();
setupExplorer();
drawPlan();
$("p-go").addEventListener("click", drawPlan);
$("c-go").addEventListener("click", runComparison);
