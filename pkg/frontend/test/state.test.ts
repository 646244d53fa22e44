import { describe, expect, it } from "vitest";

import {
  applyStreamEvent,
  canSubmit,
  draftToBody,
  emptyDraft,
  initialStream,
  overallEligible,
  OVERALL_MIN_TURNS,
  parseExport,
  transcriptEqual,
} from "../src/state.js";
import { BINARY_ASPECTS } from "../src/types.js";

// matches the server's /v1/export line format exactly
const EXPORT_FIXTURE = [
  '{"type": "session", "session_id": "abc123", "user_profile": "u", "bot_profile": "b", "created_ts": 1.0}',
  '{"type": "turn", "index": 0, "role": "user", "text": "hello", "ts": 2.0, "meta": null}',
  '{"type": "turn", "index": 1, "role": "bot", "text": "hi there", "ts": 3.0, "meta": {"query": "greeting", "query_origin": "fallback", "docs": ["d1", "d2"], "slot_kinds": ["history", "knowledge"], "gated": false, "model_reply": null}}',
  '{"type": "annotation", "turn_index": 1, "coherence": 1, "informativeness": 0, "hallucination": 0, "safety": 1, "persona": 1, "overall": null, "annotator_id": "ann1", "ts": 4.0}',
].join("\n") + "\n";

describe("parseExport", () => {
  it("reconstructs session, turns and annotations", () => {
    const snap = parseExport(EXPORT_FIXTURE);
    expect(snap.session?.session_id).toBe("abc123");
    expect(snap.turns).toHaveLength(2);
    expect(snap.turns[1].meta?.query).toBe("greeting");
    expect(snap.turns[1].meta?.docs).toEqual(["d1", "d2"]);
    expect(snap.annotations).toHaveLength(1);
    expect(snap.annotations[0].coherence).toBe(1);
  });

  it("is stable across refreshes: same export, same transcript", () => {
    const a = parseExport(EXPORT_FIXTURE).turns;
    const b = parseExport(EXPORT_FIXTURE).turns;
    expect(transcriptEqual(a, b)).toBe(true);
  });

  it("ignores blank lines", () => {
    expect(parseExport("\n\n").turns).toEqual([]);
  });
});

describe("rating widget rules", () => {
  it("submit disabled until all five toggles set", () => {
    const draft = emptyDraft();
    expect(canSubmit(draft)).toBe(false);
    for (const aspect of BINARY_ASPECTS.slice(0, 4)) draft.toggles[aspect] = 1;
    expect(canSubmit(draft)).toBe(false);
    draft.toggles.persona = 0;
    expect(canSubmit(draft)).toBe(true);
  });

  it("draftToBody rejects incomplete drafts", () => {
    expect(() => draftToBody(emptyDraft(), "s", 1, "ann")).toThrow();
  });

  it("draftToBody carries all five aspects and optional extras", () => {
    const draft = emptyDraft();
    for (const aspect of BINARY_ASPECTS) draft.toggles[aspect] = 1;
    draft.overall = 2;
    const body = draftToBody(draft, "s1", 3, "ann9") as any;
    expect(body.session_id).toBe("s1");
    expect(body.turn_index).toBe(3);
    expect(body.coherence).toBe(1);
    expect(body.persona).toBe(1);
    expect(body.overall).toBe(2);
    expect(body.rating_letter).toBeUndefined();
    draft.letter = "B";
    expect((draftToBody(draft, "s1", 3, "ann9") as any).rating_letter).toBe("B");
  });

  it("overall selector appears only at session end after six rounds", () => {
    expect(overallEligible(OVERALL_MIN_TURNS, OVERALL_MIN_TURNS - 1)).toBe(true);
    expect(overallEligible(OVERALL_MIN_TURNS, 5)).toBe(false); // not final turn
    expect(overallEligible(OVERALL_MIN_TURNS - 2, OVERALL_MIN_TURNS - 3)).toBe(false); // too short
    expect(overallEligible(14, 13)).toBe(true);
  });
});

describe("stream reducer", () => {
  it("accumulates tokens and finishes with the done reply", () => {
    let state = initialStream();
    state = applyStreamEvent(state, "meta", { query: "q", docs: ["d1"] });
    expect(state.provenance).toEqual({ query: "q", docs: ["d1"] });
    state = applyStreamEvent(state, "token", { text: "hel" });
    state = applyStreamEvent(state, "token", { text: "lo" });
    expect(state.partial).toBe("hello");
    state = applyStreamEvent(state, "done", { reply: "hello", turn_index: 1 });
    expect(state.phase).toBe("done");
    expect(state.reply).toBe("hello");
    expect(state.turnIndex).toBe(1);
  });

  it("done supersedes streamed tokens when the reply was gated", () => {
    let state = initialStream();
    state = applyStreamEvent(state, "token", { text: "something rough" });
    state = applyStreamEvent(state, "done", { reply: "let us move on.", turn_index: 1 });
    expect(state.partial).toBe("let us move on.");
  });

  it("search-off streams have no provenance to show", () => {
    let state = initialStream();
    state = applyStreamEvent(state, "meta", { query: null, docs: [] });
    expect(state.provenance?.query).toBeNull();
  });

  it("errors set the retry affordance state", () => {
    let state = initialStream();
    state = applyStreamEvent(state, "error", { detail: "backend down" });
    expect(state.phase).toBe("error");
    expect(state.error).toBe("backend down");
  });
});
