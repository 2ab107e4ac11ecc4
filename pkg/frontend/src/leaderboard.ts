// Leaderboard page: one table per GET /leaderboard response, slice selector.

import { ArenaClient, LeaderboardResponse, SliceKey } from "./api.js";

const AXES: Array<[SliceKey["axis"] | "", string]> = [
  ["", "Overall"],
  ["question_category", "Question category"],
  ["image_domain", "Image domain"],
];

export interface LeaderboardView {
  root: HTMLElement;
  load(slice?: SliceKey): Promise<void>;
  fetchCount: () => number;
}

export function createLeaderboardView(
  root: HTMLElement,
  client: ArenaClient,
): LeaderboardView {
  let fetches = 0;

  root.innerHTML = `
    <div class="leaderboard">
      <div class="slice-picker">
        <select data-role="axis">
          ${AXES.map(([v, label]) => `<option value="${v}">${label}</option>`).join("")}
        </select>
        <input type="text" data-role="value" placeholder="slice value" />
        <button data-role="load">Load</button>
      </div>
      <p data-role="timestamp"></p>
      <table data-role="table" hidden>
        <thead>
          <tr><th>#</th><th>Model</th><th>Rating</th><th>Battles</th><th>95% CI</th></tr>
        </thead>
        <tbody></tbody>
      </table>
      <p data-role="empty" hidden>no data yet</p>
    </div>
  `;

  const axisSelect = root.querySelector('[data-role="axis"]') as HTMLSelectElement;
  const valueInput = root.querySelector('[data-role="value"]') as HTMLInputElement;
  const table = root.querySelector('[data-role="table"]') as HTMLTableElement;
  const tbody = table.querySelector("tbody") as HTMLTableSectionElement;
  const emptyEl = root.querySelector('[data-role="empty"]') as HTMLElement;
  const timestampEl = root.querySelector('[data-role="timestamp"]') as HTMLElement;

  function render(body: LeaderboardResponse): void {
    const rows = [...body.models].sort(
      (a, b) => b.rating - a.rating || a.model.localeCompare(b.model),
    );
    tbody.innerHTML = "";
    for (const [i, row] of rows.entries()) {
      const tr = document.createElement("tr");
      const ci =
        row.lower != null && row.upper != null
          ? `${row.lower.toFixed(0)}–${row.upper.toFixed(0)}`
          : "—";
      for (const cell of [
        String(i + 1),
        row.model,
        row.rating.toFixed(0),
        row.battles != null ? String(row.battles) : "—",
        ci,
      ]) {
        const td = document.createElement("td");
        td.textContent = cell;
        tr.appendChild(td);
      }
      tbody.appendChild(tr);
    }
    table.hidden = rows.length === 0;
    emptyEl.hidden = rows.length > 0;
    timestampEl.textContent =
      body.created_at === null
        ? ""
        : `snapshot from ${new Date(body.created_at * 1000).toISOString()}`;
  }

  async function load(slice?: SliceKey): Promise<void> {
    fetches += 1;
    render(await client.leaderboard(slice));
  }

  (root.querySelector('[data-role="load"]') as HTMLButtonElement).addEventListener(
    "click",
    () => {
      const axis = axisSelect.value as SliceKey["axis"] | "";
      const value = valueInput.value.trim();
      void load(axis && value ? { axis, value } : undefined);
    },
  );

  return { root, load, fetchCount: () => fetches };
}
