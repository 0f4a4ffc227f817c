// Bone tree panel plus retarget controls.
//
// The tree is re-rendered from the mirror on every update; rows select
// on click, leaves expose an "add children" action and every non-root
// row a "delete subtree" action. Server rejections surface in an inline
// status line, and retarget progress is plotted live on a small canvas.

import type { ErrorMsg, RetargetDone } from "./protocol";
import type { RigMirror } from "./rigMirror";
import type { ViewState } from "./viewState";

export interface PanelCallbacks {
  onSelect(id: string): void;
  onAddChildren(id: string, k: number): void;
  onDeleteSubtree(id: string): void;
  onRetarget(steps: number, targetRef: string): void;
}

export interface HierarchyPanel {
  update(mirror: RigMirror, vs: ViewState): void;
  pushProgress(step: number, cd: number): void;
  retargetDone(msg: RetargetDone): void;
  showRejection(err: ErrorMsg): void;
}

export function createHierarchyPanel(
  parent: HTMLElement,
  callbacks: PanelCallbacks,
): HierarchyPanel {
  const tree = document.createElement("div");
  tree.className = "bone-tree";
  parent.appendChild(tree);

  const retargetBox = document.createElement("div");
  retargetBox.className = "retarget-box";
  retargetBox.innerHTML = `
    <div class="row">
      <input class="target-ref" placeholder="target ref (rig or rig:frame.obj)" />
      <input class="steps" type="number" value="50" min="1" />
      <button class="start">retarget</button>
    </div>
    <canvas class="progress-plot" width="260" height="80"></canvas>
    <div class="status"></div>
    <div class="rejection"></div>
  `;
  parent.appendChild(retargetBox);

  const refInput = retargetBox.querySelector<HTMLInputElement>(".target-ref")!;
  const stepsInput = retargetBox.querySelector<HTMLInputElement>(".steps")!;
  const startBtn = retargetBox.querySelector<HTMLButtonElement>(".start")!;
  const plot = retargetBox.querySelector<HTMLCanvasElement>(".progress-plot")!;
  const status = retargetBox.querySelector<HTMLElement>(".status")!;
  const rejection = retargetBox.querySelector<HTMLElement>(".rejection")!;

  let series: [number, number][] = [];

  startBtn.addEventListener("click", () => {
    const steps = parseInt(stepsInput.value, 10);
    if (!refInput.value || !Number.isFinite(steps)) return;
    series = [];
    rejection.textContent = "";
    status.textContent = "retargeting...";
    drawSeries();
    callbacks.onRetarget(steps, refInput.value);
  });

  function drawSeries(): void {
    const ctx = plot.getContext("2d");
    if (!ctx) return;
    ctx.clearRect(0, 0, plot.width, plot.height);
    ctx.strokeStyle = "#444";
    ctx.strokeRect(0.5, 0.5, plot.width - 1, plot.height - 1);
    if (series.length < 2) return;
    const xs = series.map((p) => p[0]);
    const ys = series.map((p) => p[1]);
    const x0 = Math.min(...xs);
    const x1 = Math.max(...xs);
    const y1 = Math.max(...ys);
    const y0 = Math.min(...ys);
    const sx = (x: number) => ((x - x0) / Math.max(1e-9, x1 - x0)) * (plot.width - 8) + 4;
    const sy = (y: number) =>
      plot.height - 4 - ((y - y0) / Math.max(1e-12, y1 - y0)) * (plot.height - 8);
    ctx.strokeStyle = "#7fb2ff";
    ctx.beginPath();
    series.forEach(([x, y], i) => (i ? ctx.lineTo(sx(x), sy(y)) : ctx.moveTo(sx(x), sy(y))));
    ctx.stroke();
  }

  function renderTree(mirror: RigMirror, vs: ViewState): void {
    tree.textContent = "";
    for (const id of mirror.boneOrder()) {
      const bone = mirror.bone(id);
      const row = document.createElement("div");
      row.className = "bone-row" + (vs.selected === id ? " selected" : "");
      row.style.paddingLeft = `${(bone.depth - 1) * 14}px`;
      row.dataset.bone = id;

      const label = document.createElement("span");
      label.className = "bone-label";
      label.textContent = `${id} (d${bone.depth})`;
      label.addEventListener("click", () => callbacks.onSelect(id));
      row.appendChild(label);

      if (bone.children.length === 0) {
        const addBtn = document.createElement("button");
        addBtn.textContent = "+2";
        addBtn.title = "add 2 children";
        addBtn.disabled = mirror.busy || !vs.connected;
        addBtn.addEventListener("click", () => callbacks.onAddChildren(id, 2));
        row.appendChild(addBtn);
      }
      const delBtn = document.createElement("button");
      delBtn.textContent = "x";
      delBtn.title = "delete subtree";
      delBtn.disabled = mirror.busy || !vs.connected;
      delBtn.addEventListener("click", () => callbacks.onDeleteSubtree(id));
      row.appendChild(delBtn);

      tree.appendChild(row);
    }
    startBtn.disabled = mirror.busy || !vs.connected;
  }

  return {
    update: renderTree,
    pushProgress(step, cd) {
      series.push([step, cd]);
      status.textContent = `step ${step}  cd ${cd.toExponential(3)}`;
      drawSeries();
    },
    retargetDone(msg) {
      status.textContent = `done at step ${msg.step}: cd ${msg.cd.toExponential(3)} (${msg.stopped})`;
    },
    showRejection(err) {
      rejection.textContent = `${err.code}: ${err.message}`;
    },
  };
}
