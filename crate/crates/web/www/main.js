import init, { synthesize, extract, simulate, bundled_model } from "./pkg/hazsynth_web.js";

const $ = (id) => document.getElementById(id);

function show(el, text) {
  el.textContent = text;
}

function parse(json) {
  const v = JSON.parse(json);
  if (v.error) throw new Error(v.error);
  return v;
}

// world (m) -> canvas (px)
const view = { x0: -4, x1: 5.5, y0: -2.2, y1: 1.6 };
function px(canvas, [x, y]) {
  const sx = canvas.width / (view.x1 - view.x0);
  const sy = canvas.height / (view.y1 - view.y0);
  return [(x - view.x0) * sx, canvas.height - (y - view.y0) * sy];
}

function drawFrame(canvas, trace, k) {
  const g = canvas.getContext("2d");
  g.clearRect(0, 0, canvas.width, canvas.height);
  const scale = canvas.width / (view.x1 - view.x0);
  for (const { name, region } of trace.areas) {
    if (region.shape !== "disc") continue;
    const [cx, cy] = px(canvas, region.center);
    g.beginPath();
    g.arc(cx, cy, region.radius * scale, 0, 2 * Math.PI);
    g.strokeStyle = name === "E" ? "#e90" : name === "W" ? "#69c" : "#aaa";
    g.stroke();
    g.fillStyle = "#555";
    g.fillText(name, cx + 4, cy - 4);
  }
  const [a, b] = [px(canvas, trace.path[0]), px(canvas, trace.path[trace.path.length - 1])];
  g.strokeStyle = "#ccc";
  g.beginPath(); g.moveTo(...a); g.lineTo(...b); g.stroke();

  const [t, hx, hy, rx, ry, v, r, contact] = trace.samples[k];
  g.fillStyle = contact ? "#b00" : "#2a2";
  g.beginPath(); g.arc(...px(canvas, [hx, hy]), 8, 0, 2 * Math.PI); g.fill();
  g.fillStyle = v > 0 ? "#c60" : "#777";
  g.fillRect(...px(canvas, [rx, ry]).map((c) => c - 6), 12, 12);
  g.fillStyle = "#000";
  g.fillText(`t = ${t.toFixed(2)} s   v_R = ${v.toFixed(0)} mm/s   r = ${r.toFixed(3)}`, 10, 16);
}

let timer = null;
function animate(trace) {
  clearInterval(timer);
  const canvas = $("cell");
  let k = 0;
  timer = setInterval(() => {
    drawFrame(canvas, trace, k);
    k += 1;
    if (k >= trace.samples.length) clearInterval(timer);
  }, 25);
}

async function main() {
  await init();
  $("src").value = bundled_model("scenario_a");
  for (const btn of document.querySelectorAll("[data-model]")) {
    btn.onclick = () => { $("src").value = bundled_model(btn.dataset.model); };
  }
  $("synth").onclick = () => {
    try {
      const v = parse(synthesize($("src").value));
      show($("synth-out"),
        `supervisor: ${v.states} states, ${v.transitions} transitions` +
        ` (unrestricted ${v.unrestricted_states} / ${v.unrestricted_transitions}, removed ${v.removed_states})` +
        (v.empty ? "\nEMPTY: no hazard is reachable" : "") + "\n\n" + v.dot);
    } catch (e) { show($("synth-out"), e.message); }
  };
  $("extract").onclick = () => {
    try {
      const v = parse(extract($("src").value, Number($("horizon").value), $("terminal").checked));
      show($("extract-out"),
        `${v.full.length} sequences, ${v.proactive.length} proactive projections\n\n` + v.proactive.join("\n"));
    } catch (e) { show($("extract-out"), e.message); }
  };
  $("simulate").onclick = () => {
    try {
      const v = parse(simulate($("seq").value, Number($("seed").value),
        Number($("latency").value), Number($("braking").value)));
      const s = v.summary;
      $("sim-summary").innerHTML =
        `<span class="${v.verdict}">${v.verdict}</span> — r_max ${s.r_max.toFixed(3)}, ` +
        `ended by ${s.cause} after ${s.duration.toFixed(2)} s; executed: ${s.executed.join(" ")}` +
        (s.skipped.length ? `; skipped: ${s.skipped.join(" ")}` : "");
      animate(v);
    } catch (e) { $("sim-summary").textContent = e.message; }
  };
}

main();
