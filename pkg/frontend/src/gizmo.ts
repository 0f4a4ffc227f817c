// Drag-to-edit: a TransformControls rig bound to an invisible proxy at
// the selected bone's world placement. Drags re-pose the proxy; the new
// local transform is recovered against the parent's world and fed to a
// live preview, then committed on release as one set_bone_local.

import * as THREE from "three";
import { TransformControls } from "three/examples/jsm/controls/TransformControls.js";
import type { Mat3 } from "./protocol";
import { composeRigid, IDENT3, invertRigid, Rigid } from "./math3";
import type { GizmoMode } from "./viewState";
import { setPose, Viewport } from "./viewport";

export interface GizmoCallbacks {
  onPreview(boneId: string, local: Rigid): void;
  onCommit(boneId: string, local: Rigid): void;
}

function rotationRows(q: THREE.Quaternion): Mat3 {
  const e = new THREE.Matrix4().makeRotationFromQuaternion(q).elements; // column-major
  return [
    [e[0], e[4], e[8]],
    [e[1], e[5], e[9]],
    [e[2], e[6], e[10]],
  ];
}

export class BoneGizmo {
  private controls: TransformControls;
  private proxy = new THREE.Object3D();
  private boneId: string | null = null;
  private parentWorld: Rigid = { r: IDENT3, t: [0, 0, 0] };
  private pendingLocal: Rigid | null = null;
  dragging = false;

  constructor(viewport: Viewport, private callbacks: GizmoCallbacks) {
    viewport.scene.add(this.proxy);
    this.controls = new TransformControls(viewport.camera, viewport.renderer.domElement);
    this.controls.setSpace("local");
    this.controls.setSize(0.8);
    // Newer releases separate the scene node out as getHelper().
    const asScene = this.controls as unknown as { getHelper?: () => THREE.Object3D };
    viewport.scene.add(asScene.getHelper ? asScene.getHelper() : (this.controls as unknown as THREE.Object3D));

    this.controls.addEventListener("dragging-changed", (ev: { value?: unknown }) => {
      this.dragging = Boolean(ev.value);
      viewport.orbit.enabled = !this.dragging;
      if (!this.dragging && this.boneId && this.pendingLocal) {
        this.callbacks.onCommit(this.boneId, this.pendingLocal);
        this.pendingLocal = null;
      }
    });
    this.controls.addEventListener("objectChange", () => {
      if (!this.boneId) return;
      const world: Rigid = {
        r: rotationRows(this.proxy.quaternion),
        t: [this.proxy.position.x, this.proxy.position.y, this.proxy.position.z],
      };
      this.pendingLocal = composeRigid(invertRigid(this.parentWorld), world);
      this.callbacks.onPreview(this.boneId, this.pendingLocal);
    });
  }

  attach(boneId: string, world: Rigid, parentWorld: Rigid): void {
    this.boneId = boneId;
    this.parentWorld = parentWorld;
    setPose(this.proxy, world);
    this.controls.attach(this.proxy);
  }

  detach(): void {
    this.boneId = null;
    this.pendingLocal = null;
    this.controls.detach();
  }

  setMode(mode: GizmoMode): void {
    this.controls.setMode(mode);
  }

  setEnabled(enabled: boolean): void {
    this.controls.enabled = enabled;
    if (!enabled) this.controls.detach();
  }
}
