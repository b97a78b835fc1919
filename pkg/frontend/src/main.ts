/** Console entry point: settings, polling loop, and render wiring. */

import { ServiceClient } from "./api.js";
import { Poller, QueueModel } from "./queue.js";
import { render } from "./ui.js";
import type { CatalogEntry } from "./types.js";

const SETTINGS_KEY = "exrec-console-settings";

interface Settings {
  baseUrl: string;
  token: string;
  intervalMs: number;
}

function loadSettings(): Settings {
  const fallback: Settings = {
    baseUrl: window.location.origin.replace(/:\d+$/, ":8423"),
    token: "",
    intervalMs: 3000,
  };
  try {
    const raw = window.localStorage.getItem(SETTINGS_KEY);
    if (!raw) return fallback;
    return { ...fallback, ...(JSON.parse(raw) as Partial<Settings>) };
  } catch {
    return fallback;
  }
}

function saveSettings(settings: Settings): void {
  window.localStorage.setItem(SETTINGS_KEY, JSON.stringify(settings));
}

async function boot(): Promise<void> {
  const root = document.getElementById("queue");
  const settingsForm = document.getElementById("settings");
  if (!root || !settingsForm) throw new Error("console mount points missing");

  let settings = loadSettings();
  let client = new ServiceClient({
    baseUrl: settings.baseUrl,
    token: settings.token || undefined,
  });
  let model = new QueueModel(client);
  let catalog: CatalogEntry[] = [];
  let poller: Poller | null = null;

  const refreshCatalog = async () => {
    try {
      catalog = await client.fetchCatalog();
    } catch {
      catalog = [];   // picker degrades; the banner explains the outage
    }
  };

  const restart = async () => {
    poller?.stop();
    client = new ServiceClient({
      baseUrl: settings.baseUrl,
      token: settings.token || undefined,
    });
    model = new QueueModel(client);
    await refreshCatalog();
    poller = new Poller(
      model,
      (snapshot) =>
        render(
          {
            root,
            model,
            catalog,
            onRetry: () => void poller?.tick(),
            onToken: (token) => {
              settings = { ...settings, token };
              saveSettings(settings);
              void restart();
            },
          },
          snapshot,
        ),
      settings.intervalMs,
    );
    poller.start();
  };

  const baseInput = settingsForm.querySelector<HTMLInputElement>("#base-url");
  const tokenInput = settingsForm.querySelector<HTMLInputElement>("#token");
  const intervalInput = settingsForm.querySelector<HTMLInputElement>("#interval");
  const apply = settingsForm.querySelector<HTMLButtonElement>("#apply");
  if (baseInput) baseInput.value = settings.baseUrl;
  if (tokenInput) tokenInput.value = settings.token;
  if (intervalInput) intervalInput.value = String(settings.intervalMs);
  apply?.addEventListener("click", () => {
    settings = {
      baseUrl: baseInput?.value || settings.baseUrl,
      token: tokenInput?.value ?? "",
      intervalMs: Math.max(500, Number(intervalInput?.value) || 3000),
    };
    saveSettings(settings);
    void restart();
  });

  await restart();
}

void boot();
