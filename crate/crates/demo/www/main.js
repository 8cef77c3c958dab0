import init, { Demo } from "./pkg/seqsel_demo.js";

const $ = (id) => document.getElementById(id);
let demo = null;
let trace = null;
let shown = 0;
let curve = [];

function fail(e) {
  $("error").textContent = String(e && e.message ? e.message : e);
}

function axes(ctx, w, h) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(30, 5);
  ctx.lineTo(30, h - 20);
  ctx.lineTo(w - 5, h - 20);
  ctx.stroke();
}

function drawCurve(total, nFeatures) {
  const c = $("curve"), ctx = c.getContext("2d");
  axes(ctx, c.width, c.height);
  const x = (e) => 30 + (c.width - 40) * e / total;
  const y = (v) => c.height - 20 - (c.height - 30) * v;
  const line = (key, scale, color) => {
    ctx.strokeStyle = color;
    ctx.beginPath();
    curve.forEach((p, i) => (i ? ctx.lineTo : ctx.moveTo).call(ctx, x(p.episodes_done), y(p[key] / scale)));
    ctx.stroke();
  };
  line("accuracy", 1, "#2a7");
  line("mean_length", nFeatures, "#c60");
  line("epsilon", 1, "#999");
  ctx.fillStyle = "#2a7"; ctx.fillText("accuracy", 40, 14);
  ctx.fillStyle = "#c60"; ctx.fillText("reveals / n", 110, 14);
  ctx.fillStyle = "#999"; ctx.fillText("epsilon", 190, 14);
}

function train() {
  $("error").textContent = "";
  const n = Number($("n").value);
  const opts = {
    rule: $("rule").value,
    n_features: n,
    informative_indices: $("inf").value.split(/[ ,]+/).filter((s) => s).map(Number),
    episodes: Number($("episodes").value),
    lambda: Number($("lambda").value),
    seed: Number($("seed").value),
    categories: n % 4 === 0 ? 4 : 1,
  };
  try {
    demo = new Demo(JSON.stringify(opts));
  } catch (e) {
    return fail(e);
  }
  curve = [];
  for (const id of ["train", "load", "step", "report"]) $(id).disabled = true;
  const chunk = () => {
    let p;
    try {
      p = JSON.parse(demo.train(100));
    } catch (e) {
      $("train").disabled = false;
      return fail(e);
    }
    curve.push(p);
    drawCurve(p.episodes_total, n);
    $("progress").textContent = `${p.episodes_done} / ${p.episodes_total}`;
    if (p.episodes_done < p.episodes_total) {
      requestAnimationFrame(chunk);
    } else {
      for (const id of ["train", "load", "report"]) $(id).disabled = false;
      $("index").max = demo.testSize() - 1;
    }
  };
  requestAnimationFrame(chunk);
}

function load() {
  try {
    trace = JSON.parse(demo.episode(Number($("index").value)));
  } catch (e) {
    return fail(e);
  }
  shown = 0;
  $("step").disabled = false;
  render();
}

function render() {
  const step = trace.steps[shown];
  const n = trace.features.length;
  const cells = trace.features.map((v, i) => {
    const on = step.revealed.includes(i);
    const now = !step.classify && step.target === i;
    return `<span class="${on ? "on" : ""} ${now ? "now" : ""}">${on ? v.toFixed(2) : "?"}</span>`;
  });
  $("cells").innerHTML = cells.join("");
  const what = step.classify
    ? `classify as ${step.target} (true label ${trace.label})`
    : `reveal feature ${step.target}`;
  $("stepinfo").textContent = `step ${shown + 1} of ${trace.steps.length}: ${what}`;

  const c = $("qbars"), ctx = c.getContext("2d");
  axes(ctx, c.width, c.height);
  const q = step.q_values;
  const lo = Math.min(...q), hi = Math.max(...q);
  const span = hi - lo || 1;
  const w = (c.width - 40) / q.length;
  q.forEach((v, a) => {
    const h = (c.height - 40) * (v - lo) / span + 4;
    ctx.fillStyle = !step.valid[a] ? "#ddd" : a === step.action ? "#c60" : a < n ? "#69c" : "#2a7";
    ctx.fillRect(32 + a * w, c.height - 20 - h, w - 2, h);
    ctx.fillStyle = "#333";
    ctx.fillText(a < n ? `f${a}` : `c${a - n}`, 34 + a * w, c.height - 6);
  });
  ctx.fillText(`Q in [${lo.toFixed(4)}, ${hi.toFixed(4)}]`, 40, 14);
  $("step").disabled = shown + 1 >= trace.steps.length;
}

function report() {
  let r;
  try {
    r = JSON.parse(demo.report());
  } catch (e) {
    return fail(e);
  }
  const hist = r.histogram.map((b) => `${b.length}:${b.count}`).join(" ");
  $("summary").textContent =
    `accuracy ${r.accuracy.toFixed(3)} on ${r.n_test} samples, mean reveals ${r.mean_length.toFixed(2)}, ` +
    `lengths ${hist}, learning score ${r.learning_score.toFixed(2)}`;
  const c = $("freq"), ctx = c.getContext("2d");
  axes(ctx, c.width, c.height);
  const w = (c.width - 40) / r.feature_frequency.length;
  r.feature_frequency.forEach((f, i) => {
    const h = (c.height - 30) * f;
    ctx.fillStyle = r.informative_indices.includes(i) ? "#c60" : "#69c";
    ctx.fillRect(32 + i * w, c.height - 20 - h, w - 2, h);
    ctx.fillStyle = "#333";
    ctx.fillText(`f${i}`, 34 + i * w, c.height - 6);
  });
  const rows = r.categories.map((u) =>
    `<tr><td>${u.name}</td><td>${u.size}</td><td>${u.observed.toFixed(3)}</td>` +
    `<td>${u.expected.toFixed(3)}</td><td>${u.preference.toFixed(2)}</td></tr>`);
  $("cats").innerHTML =
    "<tr><th>category</th><th>size</th><th>observed</th><th>expected</th><th>ratio</th></tr>" + rows.join("");
}

$("train").onclick = train;
$("load").onclick = load;
$("step").onclick = () => { shown += 1; render(); };
$("report").onclick = report;
init().catch(fail);
