// three.js viewport: the deformed surface plus one ellipsoid glyph per
// bone. Vertices are swapped in place on every authoritative or preview
// update; glyph meshes are keyed by bone id and re-posed from the
// mirror's world transforms.

import * as THREE from "three";
import { OrbitControls } from "three/examples/jsm/controls/OrbitControls.js";
import type { MeshData } from "./protocol";
import type { Glyph } from "./glyphs";
import { TINTS } from "./glyphs";
import type { Rigid } from "./math3";

const SELECT_COLOR = 0xffffff;

export class Viewport {
  readonly scene = new THREE.Scene();
  readonly camera: THREE.PerspectiveCamera;
  readonly renderer: THREE.WebGLRenderer;
  readonly orbit: OrbitControls;

  private surface: THREE.Mesh | null = null;
  private glyphGroup = new THREE.Group();
  private glyphMeshes = new Map<string, THREE.Mesh>();
  private unitSphere = new THREE.SphereGeometry(1, 24, 16);
  private raycaster = new THREE.Raycaster();

  constructor(private container: HTMLElement) {
    this.camera = new THREE.PerspectiveCamera(45, 1, 0.01, 500);
    this.camera.position.set(3, -6, 2.5);
    this.camera.up.set(0, 0, 1);

    this.renderer = new THREE.WebGLRenderer({ antialias: true });
    this.renderer.setPixelRatio(window.devicePixelRatio);
    container.appendChild(this.renderer.domElement);

    this.orbit = new OrbitControls(this.camera, this.renderer.domElement);
    this.orbit.enableDamping = true;

    this.scene.background = new THREE.Color(0x16181c);
    this.scene.add(new THREE.HemisphereLight(0xdfe6f0, 0x30343c, 0.9));
    const sun = new THREE.DirectionalLight(0xffffff, 1.4);
    sun.position.set(4, -7, 6);
    this.scene.add(sun);
    this.scene.add(new THREE.GridHelper(10, 20, 0x3a4150, 0x262b33).rotateX(Math.PI / 2));
    this.scene.add(this.glyphGroup);

    this.resize();
    window.addEventListener("resize", () => this.resize());
  }

  resize(): void {
    const w = this.container.clientWidth || 1;
    const h = this.container.clientHeight || 1;
    this.camera.aspect = w / h;
    this.camera.updateProjectionMatrix();
    this.renderer.setSize(w, h);
  }

  render(): void {
    this.orbit.update();
    this.renderer.render(this.scene, this.camera);
  }

  /** Install a mesh (vertices + triangles); replaces any previous surface. */
  setMesh(mesh: MeshData): void {
    if (this.surface) {
      this.surface.geometry.dispose();
      this.scene.remove(this.surface);
    }
    const geo = new THREE.BufferGeometry();
    geo.setAttribute("position", new THREE.BufferAttribute(mesh.vertices.slice(), 3));
    geo.setIndex(new THREE.BufferAttribute(mesh.triangles.slice(), 1));
    geo.computeVertexNormals();
    const mat = new THREE.MeshStandardMaterial({
      color: 0x8b93a1,
      roughness: 0.85,
      metalness: 0.0,
      side: THREE.DoubleSide,
    });
    this.surface = new THREE.Mesh(geo, mat);
    this.scene.add(this.surface);
  }

  /** Swap vertex positions (authoritative mesh_update or drag preview). */
  updateVertices(vertices: Float32Array): void {
    if (!this.surface) return;
    const attr = this.surface.geometry.getAttribute("position") as THREE.BufferAttribute;
    if (attr.count * 3 !== vertices.length) return; // rig edit in flight; setMesh follows
    (attr.array as Float32Array).set(vertices);
    attr.needsUpdate = true;
    this.surface.geometry.computeVertexNormals();
    this.surface.geometry.computeBoundingSphere();
  }

  /** Re-pose glyphs; creates and removes meshes as bones come and go. */
  updateGlyphs(glyphs: Glyph[], visible: Set<string>, selected: string | null): void {
    const seen = new Set<string>();
    for (const g of glyphs) {
      seen.add(g.id);
      let mesh = this.glyphMeshes.get(g.id);
      if (!mesh) {
        mesh = new THREE.Mesh(
          this.unitSphere,
          new THREE.MeshStandardMaterial({
            transparent: true,
            opacity: 0.45,
            roughness: 0.4,
          }),
        );
        mesh.userData.boneId = g.id;
        this.glyphMeshes.set(g.id, mesh);
        this.glyphGroup.add(mesh);
      }
      setPose(mesh, { r: g.rotation, t: g.position });
      mesh.scale.set(g.scale[0], g.scale[1], g.scale[2]);
      mesh.visible = visible.has(g.id);
      const mat = mesh.material as THREE.MeshStandardMaterial;
      mat.color.setHex(TINTS[g.tint]);
      mat.emissive.setHex(g.id === selected ? SELECT_COLOR : 0x000000);
      mat.emissiveIntensity = g.id === selected ? 0.35 : 0.0;
    }
    for (const [id, mesh] of this.glyphMeshes) {
      if (!seen.has(id)) {
        this.glyphGroup.remove(mesh);
        (mesh.material as THREE.Material).dispose();
        this.glyphMeshes.delete(id);
      }
    }
  }

  /** Bone id under a pointer event, or null. */
  pick(clientX: number, clientY: number): string | null {
    const rect = this.renderer.domElement.getBoundingClientRect();
    const ndc = new THREE.Vector2(
      ((clientX - rect.left) / rect.width) * 2 - 1,
      -((clientY - rect.top) / rect.height) * 2 + 1,
    );
    this.raycaster.setFromCamera(ndc, this.camera);
    const targets = [...this.glyphMeshes.values()].filter((m) => m.visible);
    const hits = this.raycaster.intersectObjects(targets, false);
    return hits.length ? (hits[0].object.userData.boneId as string) : null;
  }
}

/** Apply a rigid world placement to an Object3D (row-major rotation). */
export function setPose(obj: THREE.Object3D, world: Rigid): void {
  const m = new THREE.Matrix4();
  // Matrix4.set takes row-major arguments.
  m.set(
    world.r[0][0], world.r[0][1], world.r[0][2], world.t[0],
    world.r[1][0], world.r[1][1], world.r[1][2], world.t[1],
    world.r[2][0], world.r[2][1], world.r[2][2], world.t[2],
    0, 0, 0, 1,
  );
  obj.position.setFromMatrixPosition(m);
  obj.quaternion.setFromRotationMatrix(m);
}
