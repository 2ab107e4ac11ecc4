// Page wiring: upload an image, run a battle, browse the leaderboard.

import { ArenaClient, GenerationParams } from "./api.js";
import { createBattleView } from "./battle.js";
import { createLeaderboardView } from "./leaderboard.js";

function readGenerationParams(root: Document): GenerationParams {
  const num = (id: string): number | undefined => {
    const input = root.querySelector<HTMLInputElement>(`#${id}`);
    if (!input || input.value.trim() === "") return undefined;
    const value = Number(input.value);
    return Number.isFinite(value) ? value : undefined;
  };
  return {
    temperature: num("param-temperature"),
    top_p: num("param-top-p"),
    max_tokens: num("param-max-tokens"),
  };
}

function fileToBase64(file: File): Promise<string> {
  return new Promise((resolve, reject) => {
    const reader = new FileReader();
    reader.onerror = () => reject(reader.error);
    reader.onload = () => {
      const url = reader.result as string;
      resolve(url.slice(url.indexOf(",") + 1));
    };
    reader.readAsDataURL(file);
  });
}

export function boot(doc: Document = document): void {
  const client = new ArenaClient("");
  const battle = createBattleView(
    doc.querySelector("#battle") as HTMLElement,
    client,
  );
  const leaderboard = createLeaderboardView(
    doc.querySelector("#leaderboard") as HTMLElement,
    client,
  );
  void leaderboard.load();

  const upload = doc.querySelector<HTMLInputElement>("#image-upload");
  upload?.addEventListener("change", () => {
    const file = upload.files?.[0];
    if (!file) return;
    void fileToBase64(file).then((b64) =>
      battle.startBattle(b64, readGenerationParams(doc)),
    );
  });
}

if (typeof document !== "undefined" && document.querySelector("#battle")) {
  boot();
}
