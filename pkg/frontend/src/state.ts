// Pure state logic: server export parsing, the rating widget rules, and
// the stream event reducer. The server is the source of truth; the UI
// never invents turns or annotations, it renders what export returns.

import {
  AnnotationDraft,
  AnnotationLine,
  BINARY_ASPECTS,
  ExportSnapshot,
  UiTurn,
} from "./types.js";

export function parseExport(text: string): ExportSnapshot {
  const snapshot: ExportSnapshot = { session: null, turns: [], annotations: [] };
  for (const line of text.split("\n")) {
    if (!line.trim()) continue;
    const row = JSON.parse(line);
    if (row.type === "session") {
      snapshot.session = {
        session_id: row.session_id,
        user_profile: row.user_profile ?? "",
        bot_profile: row.bot_profile ?? "",
      };
    } else if (row.type === "turn") {
      snapshot.turns.push({
        index: row.index,
        role: row.role,
        text: row.text,
        meta: row.meta ?? null,
      });
    } else if (row.type === "annotation") {
      snapshot.annotations.push(row as AnnotationLine);
    }
  }
  return snapshot;
}

export function emptyDraft(): AnnotationDraft {
  return { toggles: {}, overall: null, letter: null };
}

export function allTogglesSet(draft: AnnotationDraft): boolean {
  return BINARY_ASPECTS.every((aspect) => draft.toggles[aspect] !== undefined);
}

// submit stays disabled until every binary aspect has a value
export function canSubmit(draft: AnnotationDraft): boolean {
  return allTogglesSet(draft);
}

// the overall 0-2 selector only appears at session end, once the
// conversation has at least 6 rounds (12 turns)
export const OVERALL_MIN_TURNS = 12;

export function overallEligible(turnCount: number, turnIndex: number): boolean {
  return turnCount >= OVERALL_MIN_TURNS && turnIndex === turnCount - 1;
}

export function draftToBody(
  draft: AnnotationDraft,
  sessionId: string,
  turnIndex: number,
  annotatorId: string,
) {
  if (!canSubmit(draft)) {
    throw new Error("all five aspects must be set before submitting");
  }
  const body: Record<string, unknown> = {
    session_id: sessionId,
    turn_index: turnIndex,
    annotator_id: annotatorId,
    overall: draft.overall,
  };
  for (const aspect of BINARY_ASPECTS) body[aspect] = draft.toggles[aspect];
  if (draft.letter) body.rating_letter = draft.letter;
  return body;
}

// ---- stream reducer ----

export interface StreamState {
  phase: "idle" | "streaming" | "done" | "error";
  provenance: { query: string | null; docs: string[] } | null;
  partial: string;
  reply: string | null;
  error: string | null;
  turnIndex: number | null;
}

export function initialStream(): StreamState {
  return { phase: "idle", provenance: null, partial: "", reply: null, error: null, turnIndex: null };
}

export function applyStreamEvent(
  state: StreamState,
  event: string,
  data: any,
): StreamState {
  switch (event) {
    case "meta":
      return {
        ...state,
        phase: "streaming",
        provenance: { query: data.query ?? null, docs: data.docs ?? [] },
      };
    case "token":
      return { ...state, phase: "streaming", partial: state.partial + (data.text ?? "") };
    case "done":
      // the done payload supersedes accumulated tokens (safety gate may
      // have rewritten the reply)
      return {
        ...state,
        phase: "done",
        reply: data.reply,
        partial: data.reply,
        turnIndex: data.turn_index ?? null,
      };
    case "error":
      return { ...state, phase: "error", error: data.detail ?? "stream error" };
    default:
      return state;
  }
}

export function transcriptEqual(a: UiTurn[], b: UiTurn[]): boolean {
  if (a.length !== b.length) return false;
  return a.every(
    (turn, i) => turn.index === b[i].index && turn.role === b[i].role && turn.text === b[i].text,
  );
}
