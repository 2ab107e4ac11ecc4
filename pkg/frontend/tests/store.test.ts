import { describe, expect, it } from "vitest";
import {
  BattleState,
  Store,
  canVote,
  emptyPane,
  initialBattleState,
} from "../src/store.js";

describe("Store", () => {
  it("notifies subscribers with the new state", () => {
    const store = new Store({ n: 0 });
    const seen: number[] = [];
    store.subscribe((s) => seen.push(s.n));
    store.update((s) => ({ n: s.n + 1 }));
    store.update((s) => ({ n: s.n + 1 }));
    expect(seen).toEqual([1, 2]);
    expect(store.getState().n).toBe(2);
  });

  it("serializes re-entrant updates instead of nesting them", () => {
    const store = new Store({ n: 0 });
    const seen: number[] = [];
    store.subscribe((s) => {
      seen.push(s.n);
      if (s.n === 1) store.update((prev) => ({ n: prev.n + 10 }));
    });
    store.update((s) => ({ n: s.n + 1 }));
    expect(seen).toEqual([1, 11]);
    expect(store.getState().n).toBe(11);
  });

  it("stops notifying after unsubscribe", () => {
    const store = new Store({ n: 0 });
    const seen: number[] = [];
    const unsubscribe = store.subscribe((s) => seen.push(s.n));
    store.update((s) => ({ n: 1 }));
    unsubscribe();
    store.update((s) => ({ n: 2 }));
    expect(seen).toEqual([1]);
  });
});

describe("canVote", () => {
  const base = (): BattleState => ({
    ...initialBattleState(),
    sessionId: "s1",
    round: 1,
    panes: {
      A: { text: "a", done: true, error: null },
      B: { text: "b", done: true, error: null },
    },
  });

  it("allows voting once both panes completed a round", () => {
    expect(canVote(base())).toBe(true);
  });

  it("rejects voting before the first round", () => {
    expect(canVote({ ...base(), round: 0 })).toBe(false);
  });

  it("rejects voting while streaming", () => {
    expect(canVote({ ...base(), streaming: true })).toBe(false);
  });

  it("rejects a second vote", () => {
    expect(canVote({ ...base(), voted: true })).toBe(false);
  });

  it("rejects voting while one pane is still unsettled", () => {
    const s = base();
    s.panes.B = { text: "partial", done: false, error: null };
    expect(canVote(s)).toBe(false);
  });

  it("treats an errored pane as settled", () => {
    const s = base();
    s.panes.B = { text: "", done: false, error: "provider failed" };
    expect(canVote(s)).toBe(true);
  });
});
