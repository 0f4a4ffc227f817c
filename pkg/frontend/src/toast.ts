// Transient notifications, stacked bottom-right.

export interface Toaster {
  show(text: string): void;
}

export function createToaster(parent: HTMLElement, ttlMs = 3200): Toaster {
  const host = document.createElement("div");
  host.className = "toasts";
  parent.appendChild(host);
  return {
    show(text: string) {
      const el = document.createElement("div");
      el.className = "toast";
      el.textContent = text;
      host.appendChild(el);
      setTimeout(() => {
        el.classList.add("fade");
        setTimeout(() => el.remove(), 400);
      }, ttlMs);
    },
  };
}
