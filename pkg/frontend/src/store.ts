// Single store through which every UI state change is serialized.

export interface PaneState {
  text: string;
  done: boolean;
  error: string | null;
}

export interface BattleState {
  sessionId: string | null;
  round: number;
  streaming: boolean;
  voted: boolean;
  panes: { A: PaneState; B: PaneState };
  reveal: { left: string; right: string } | null;
  status: string;
}

export const emptyPane = (): PaneState => ({ text: "", done: false, error: null });

export const initialBattleState = (): BattleState => ({
  sessionId: null,
  round: 0,
  streaming: false,
  voted: false,
  panes: { A: emptyPane(), B: emptyPane() },
  reveal: null,
  status: "upload an image to start a battle",
});

/** Both panes settled (done or errored) and at least one round completed. */
export function canVote(s: BattleState): boolean {
  if (s.voted || s.streaming || s.round < 1) return false;
  const settled = (p: PaneState) => p.done || p.error !== null;
  return settled(s.panes.A) && settled(s.panes.B);
}

type Listener<S> = (state: S) => void;

export class Store<S> {
  private listeners = new Set<Listener<S>>();
  private notifying = false;
  private queue: Array<(s: S) => S> = [];

  constructor(private state: S) {}

  getState(): S {
    return this.state;
  }

  subscribe(listener: Listener<S>): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  /** Apply an update; re-entrant updates queue behind the current one. */
  update(fn: (s: S) => S): void {
    this.queue.push(fn);
    if (this.notifying) return;
    this.notifying = true;
    try {
      while (this.queue.length > 0) {
        const next = this.queue.shift()!;
        this.state = next(this.state);
        for (const listener of this.listeners) listener(this.state);
      }
    } finally {
      this.notifying = false;
    }
  }
}
