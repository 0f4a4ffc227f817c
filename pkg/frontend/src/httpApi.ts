// Thin fetch wrappers over the session service's HTTP surface.

import { MeshData, parseMeshBlob, StateBody } from "./protocol";

export interface RigListing {
  id: string;
  bones: number;
  poses: number;
}

async function getJson<T>(url: string): Promise<T> {
  const res = await fetch(url);
  if (!res.ok) throw new Error(`GET ${url}: ${res.status}`);
  return (await res.json()) as T;
}

export async function listRigs(base: string): Promise<RigListing[]> {
  const body = await getJson<{ rigs: RigListing[] }>(`${base}/rigs`);
  return body.rigs;
}

export async function createSession(base: string, rigId: string): Promise<string> {
  const res = await fetch(`${base}/sessions`, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify({ rig_id: rigId }),
  });
  if (!res.ok) throw new Error(`POST ${base}/sessions: ${res.status}`);
  const body = (await res.json()) as { session_id: string };
  return body.session_id;
}

export function fetchState(base: string, sid: string): Promise<StateBody> {
  return getJson<StateBody>(`${base}/sessions/${sid}/state`);
}

export async function fetchMesh(
  base: string,
  sid: string,
  pose: "current" | "canonical" = "current",
): Promise<MeshData> {
  const res = await fetch(`${base}/sessions/${sid}/mesh?pose=${pose}`);
  if (!res.ok) throw new Error(`GET mesh: ${res.status}`);
  return parseMeshBlob(await res.arrayBuffer());
}

export function wsUrl(base: string, sid: string): string {
  return `${base.replace(/^http/, "ws")}/sessions/${sid}/ws`;
}
