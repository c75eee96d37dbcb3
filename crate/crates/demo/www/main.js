import init, { encode_signal, kernel_between, novelty_score } from "./pkg/fusegram_demo.js";

const $ = (id) => document.getElementById(id);

function show(out, fn) {
  try {
    const value = JSON.parse(fn());
    out.className = "";
    out.textContent = JSON.stringify(value, null, 2);
    return value;
  } catch (e) {
    out.className = "err";
    out.textContent = String(e);
    return null;
  }
}

function paintGrid(pixels) {
  const grid = $("grid");
  grid.replaceChildren();
  for (const p of pixels) {
    const cell = document.createElement("div");
    cell.style.background = `rgb(${p},${p},${p})`;
    cell.style.color = p > 127 ? "#000" : "#fff";
    cell.textContent = p;
    grid.appendChild(cell);
  }
}

await init();

$("enc-go").onclick = () => {
  const v = show($("enc-out"), () => encode_signal($("enc-in").value));
  if (v) paintGrid(v.pixels);
};
$("k-go").onclick = () =>
  show($("k-out"), () => kernel_between($("k-a").value, $("k-b").value, $("k-tag").value, Number($("k-sigma").value)));
$("n-go").onclick = () =>
  show($("n-out"), () => novelty_score($("n-in").value, Number($("n-seed").value) >>> 0));

$("enc-go").click();
