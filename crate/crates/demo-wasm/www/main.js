import init, { chunkWindows, detectCommunities, mergeTest } from "./pkg/graphrag_demo.js";

const $ = (id) => document.getElementById(id);
const PALETTE = ["#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4", "#8c613c", "#dc7ec0", "#797979", "#d5bb67", "#82c6e2"];

function call(f, ...args) {
  try {
    return { ok: JSON.parse(f(...args)) };
  } catch (e) {
    return { err: String(e) };
  }
}

function runChunk() {
  const out = $("chunk-out");
  const r = call(chunkWindows, $("chunk-text").value, Number($("chunk-window").value), Number($("chunk-stride").value));
  out.replaceChildren();
  if (r.err) {
    out.textContent = r.err;
    return;
  }
  for (const w of r.ok) {
    const span = document.createElement("span");
    span.className = "win";
    span.textContent = `[${w.start}, ${w.end}) ${w.text}`;
    out.append(span);
  }
}

// Circle layout with members of a community placed next to each other.
function draw(result) {
  const canvas = $("comm-canvas");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const level = result.levels[result.levels.length - 1];
  const order = result.nodes.map((_, i) => i).sort((a, b) => level.membership[a] - level.membership[b] || a - b);
  const pos = [];
  const [cx, cy, r] = [canvas.width / 2, canvas.height / 2, Math.min(canvas.width, canvas.height) / 2 - 40];
  order.forEach((node, k) => {
    const t = (2 * Math.PI * k) / order.length;
    pos[node] = [cx + r * Math.cos(t), cy + r * Math.sin(t)];
  });
  ctx.strokeStyle = "#999";
  for (const [a, b, w] of result.edges) {
    ctx.lineWidth = Math.min(1 + Math.log(w), 6);
    ctx.beginPath();
    ctx.moveTo(...pos[a]);
    ctx.lineTo(...pos[b]);
    ctx.stroke();
  }
  ctx.font = "12px sans-serif";
  result.nodes.forEach((name, i) => {
    ctx.fillStyle = PALETTE[level.membership[i] % PALETTE.length];
    ctx.beginPath();
    ctx.arc(...pos[i], 8, 0, 2 * Math.PI);
    ctx.fill();
    ctx.fillStyle = "#222";
    ctx.fillText(name, pos[i][0] + 10, pos[i][1] - 10);
  });
}

function runCommunities() {
  const r = call(detectCommunities, $("comm-edges").value, Number($("comm-res").value), BigInt($("comm-seed").value || 0));
  if (r.err) {
    $("comm-out").textContent = r.err;
    return;
  }
  $("comm-out").textContent = r.ok.levels
    .map((l, i) => `level ${i}: ${l.communities} communities, Q = ${l.modularity.toFixed(4)}`)
    .join("\n");
  draw(r.ok);
}

function runMerge() {
  const cos = Number($("merge-cos").value);
  $("merge-cos-v").textContent = cos.toFixed(2);
  const r = call(
    mergeTest,
    $("merge-a").value,
    $("merge-b").value,
    cos,
    Number($("merge-tsim").value),
    Number($("merge-tstr").value),
    Number($("merge-lev").value),
  );
  const out = $("merge-out");
  if (r.err) {
    out.textContent = r.err;
    return;
  }
  const v = r.ok;
  const mark = (b) => `<span class="${b ? "yes" : "no"}">${b ? "yes" : "no"}</span>`;
  out.innerHTML = `
    <p>normalized: <code>${escape(v.normalized[0])}</code> / <code>${escape(v.normalized[1])}</code></p>
    <p>cosine ${v.cosine.toFixed(2)} &ge; &tau;<sub>sim</sub>: ${mark(v.passes_cosine)}<br>
    string similarity ${v.string_similarity.toFixed(3)} &ge; &tau;<sub>str</sub>: ${mark(v.passes_string)}<br>
    edit distance ${v.edit_distance} within limit: ${mark(v.passes_edit_distance)}</p>
    <p>merge: ${mark(v.duplicate)}</p>`;
}

function escape(s) {
  return s.replace(/[&<>"]/g, (c) => ({ "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;" })[c]);
}

await init();
$("chunk-run").addEventListener("click", runChunk);
$("comm-run").addEventListener("click", runCommunities);
for (const id of ["merge-a", "merge-b", "merge-cos", "merge-tsim", "merge-tstr", "merge-lev"]) {
  $(id).addEventListener("input", runMerge);
}
runChunk();
runCommunities();
runMerge();
