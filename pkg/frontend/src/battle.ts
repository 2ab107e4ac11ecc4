// Side-by-side battle view: two anonymous streaming panes, vote, reveal.

import { ArenaClient, Outcome, StreamEvent, GenerationParams } from "./api.js";
import { BattleState, Store, canVote, emptyPane, initialBattleState } from "./store.js";

const VOTE_LABELS: Array<[Outcome, string]> = [
  ["leftvote", "Left better"],
  ["rightvote", "Right better"],
  ["tievote", "Tie"],
  ["bothbad_vote", "Both bad"],
];

export interface BattleView {
  root: HTMLElement;
  store: Store<BattleState>;
  startBattle(imageB64: string, params?: GenerationParams): Promise<void>;
  send(text: string): Promise<void>;
  castVote(outcome: Outcome): Promise<void>;
}

export function createBattleView(
  root: HTMLElement,
  client: ArenaClient,
): BattleView {
  const store = new Store<BattleState>(initialBattleState());

  root.innerHTML = `
    <div class="battle">
      <p data-role="status"></p>
      <div class="panes">
        <section class="pane" data-pane="A">
          <h3>Model A</h3>
          <span class="badge" data-role="badge-A" hidden>stream error</span>
          <pre data-role="text-A"></pre>
        </section>
        <section class="pane" data-pane="B">
          <h3>Model B</h3>
          <span class="badge" data-role="badge-B" hidden>stream error</span>
          <pre data-role="text-B"></pre>
        </section>
      </div>
      <div class="composer">
        <input type="text" data-role="message" placeholder="Ask about the image" />
        <button data-role="send" disabled>Send</button>
      </div>
      <div class="voting">
        ${VOTE_LABELS.map(
          ([token, label]) =>
            `<button data-vote="${token}" disabled>${label}</button>`,
        ).join("")}
        <input type="text" data-role="reason" placeholder="Why? (optional)" />
      </div>
      <div class="reveal" data-role="reveal" hidden></div>
    </div>
  `;

  const el = <T extends HTMLElement>(sel: string) =>
    root.querySelector(sel) as T;
  const statusEl = el<HTMLElement>('[data-role="status"]');
  const sendBtn = el<HTMLButtonElement>('[data-role="send"]');
  const messageInput = el<HTMLInputElement>('[data-role="message"]');
  const reasonInput = el<HTMLInputElement>('[data-role="reason"]');
  const revealEl = el<HTMLElement>('[data-role="reveal"]');
  const voteButtons = Array.from(
    root.querySelectorAll<HTMLButtonElement>("[data-vote]"),
  );

  function render(s: BattleState): void {
    statusEl.textContent = s.status;
    for (const side of ["A", "B"] as const) {
      const pane = s.panes[side];
      el<HTMLElement>(`[data-role="text-${side}"]`).textContent = pane.text;
      el<HTMLElement>(`[data-role="badge-${side}"]`).hidden = pane.error === null;
    }
    sendBtn.disabled = s.sessionId === null || s.streaming || s.voted;
    const votable = canVote(s);
    for (const btn of voteButtons) btn.disabled = !votable;
    if (s.reveal === null) {
      revealEl.hidden = true;
      revealEl.textContent = "";
    } else {
      revealEl.hidden = false;
      revealEl.textContent = `Left was ${s.reveal.left} — Right was ${s.reveal.right}`;
    }
  }

  store.subscribe(render);
  render(store.getState());

  async function startBattle(
    imageB64: string,
    params?: GenerationParams,
  ): Promise<void> {
    const info = await client.createSession(imageB64, params);
    store.update(() => ({
      ...initialBattleState(),
      sessionId: info.session_id,
      status: "session ready — send a message",
    }));
  }

  async function send(text: string): Promise<void> {
    const { sessionId, streaming, voted } = store.getState();
    if (sessionId === null || streaming || voted) return;
    store.update((s) => ({
      ...s,
      streaming: true,
      panes: { A: emptyPane(), B: emptyPane() },
      status: "models are answering…",
    }));
    try {
      for await (const ev of client.streamMessage(sessionId, text)) {
        store.update((s) => applyEvent(s, ev));
      }
    } finally {
      store.update((s) => ({
        ...s,
        streaming: false,
        round: s.round + 1,
        status: "vote when you are ready",
      }));
    }
  }

  async function castVote(outcome: Outcome): Promise<void> {
    const s = store.getState();
    if (!canVote(s) || s.sessionId === null) return;
    const reason = reasonInput.value.trim() || undefined;
    const reveal = await client.vote(s.sessionId, outcome, reason);
    store.update((prev) => ({
      ...prev,
      voted: true,
      reveal: { left: reveal.model_left, right: reveal.model_right },
      status: "thanks for voting — start a new battle to continue",
    }));
  }

  sendBtn.addEventListener("click", () => {
    const text = messageInput.value.trim();
    if (text) void send(text);
  });
  for (const btn of voteButtons) {
    btn.addEventListener("click", () => {
      void castVote(btn.dataset.vote as Outcome);
    });
  }

  return { root, store, startBattle, send, castVote };
}

function applyEvent(s: BattleState, ev: StreamEvent): BattleState {
  const pane = { ...s.panes[ev.side] };
  if (ev.delta !== undefined) pane.text += ev.delta;
  if (ev.done) pane.done = true;
  if (ev.error !== undefined) pane.error = ev.error;
  return { ...s, panes: { ...s.panes, [ev.side]: pane } };
}
