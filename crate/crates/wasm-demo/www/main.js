import init, { saaTrajectory, aviCurve, inwardCheck } from "./pkg/svsa_wasm_demo.js";

const num = (id) => Number(document.getElementById(id).value);
const show = (id, text) => { document.getElementById(id).textContent = text; };

function plotPath(canvas, pts, events, circles) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height;
  let span = 1;
  for (let i = 0; i < pts.length; i++) span = Math.max(span, Math.abs(pts[i]));
  for (const c of circles) span = Math.max(span, c);
  span *= 1.1;
  const sx = (x) => w / 2 + (x / span) * (w / 2);
  const sy = (y) => h / 2 - (y / span) * (h / 2);
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#bbb";
  for (const c of circles) {
    ctx.beginPath();
    ctx.arc(sx(0), sy(0), (c / span) * (w / 2), 0, 2 * Math.PI);
    ctx.stroke();
  }
  ctx.strokeStyle = "#1f5fbf";
  ctx.beginPath();
  for (let i = 0; i < pts.length; i += 2) {
    const f = i === 0 ? ctx.moveTo : ctx.lineTo;
    f.call(ctx, sx(pts[i]), sy(pts[i + 1]));
  }
  ctx.stroke();
  ctx.fillStyle = "#c0392b";
  for (const k of events) ctx.fillRect(sx(pts[2 * k]) - 2, sy(pts[2 * k + 1]) - 2, 4, 4);
}

function plotCurve(canvas, ys, bound) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height;
  const top = Math.max(bound, ...ys) * 1.05;
  const px = (i) => (i / Math.max(1, ys.length - 1)) * w;
  const py = (y) => h - (y / top) * h;
  ctx.clearRect(0, 0, w, h);
  ctx.setLineDash([6, 4]);
  ctx.strokeStyle = "#888";
  ctx.beginPath();
  ctx.moveTo(0, py(bound));
  ctx.lineTo(w, py(bound));
  ctx.stroke();
  ctx.setLineDash([]);
  ctx.strokeStyle = "#1f5fbf";
  ctx.beginPath();
  ys.forEach((y, i) => (i === 0 ? ctx.moveTo(px(i), py(y)) : ctx.lineTo(px(i), py(y))));
  ctx.stroke();
}

function guard(outId, f) {
  try { f(); } catch (e) { show(outId, `error: ${e.message ?? e}`); }
}

await init();

document.getElementById("saa-run").onclick = () => guard("saa-out", () => {
  const rb = num("saa-rb"), rc = num("saa-rc");
  const raw = saaTrajectory(num("saa-k"), num("saa-r"), num("saa-noise"), num("saa-seed"), num("saa-n"), rb, rc);
  const cut = raw.findIndex(Number.isNaN);
  const pts = cut < 0 ? raw : raw.slice(0, cut);
  const events = cut < 0 ? [] : Array.from(raw.slice(cut + 1));
  plotPath(document.getElementById("saa-canvas"), pts, events, rc > 0 ? [rb, rc] : []);
  const n = pts.length;
  show("saa-out", `final iterate (${pts[n - 2].toFixed(4)}, ${pts[n - 1].toFixed(4)})` +
    (rc > 0 ? `, ${events.length} projections shown` : ""));
});

document.getElementById("avi-run").onclick = () => guard("avi-out", () => {
  const raw = aviCurve(num("avi-eps"), num("avi-noise"), num("avi-seed"), num("avi-n"));
  const bound = raw[0];
  const ys = Array.from(raw.slice(1));
  plotCurve(document.getElementById("avi-canvas"), ys, bound);
  show("avi-out", `final distance ${ys[ys.length - 1].toFixed(4)}, bound ${bound.toFixed(4)}`);
});

document.getElementById("in-run").onclick = () => guard("in-out", () => {
  const [holds, t, x, y] = inwardCheck(num("in-k"), num("in-r"), num("in-rb"), num("in-rc"));
  show("in-out", holds === 1
    ? "inward: every sampled flow stays inside"
    : `not inward: a flow leaves at t = ${t.toFixed(3)}, point (${x.toFixed(3)}, ${y.toFixed(3)})`);
});

document.getElementById("saa-run").click();
document.getElementById("avi-run").click();
document.getElementById("in-run").click();
