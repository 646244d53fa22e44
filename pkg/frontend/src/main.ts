// DOM wiring for the chat + evaluation client. All state shown here is
// re-derived from /v1/export after every completed exchange.

import {
  createSession,
  fetchExport,
  fetchExportRaw,
  openStream,
  submitRating,
} from "./api.js";
import {
  applyStreamEvent,
  canSubmit,
  draftToBody,
  emptyDraft,
  initialStream,
  overallEligible,
  StreamState,
} from "./state.js";
import { AnnotationDraft, AnnotationLine, BINARY_ASPECTS, UiTurn } from "./types.js";

const BASE = "";

const el = (id: string) => document.getElementById(id) as HTMLElement;
const input = (id: string) => document.getElementById(id) as HTMLInputElement;

let sessionId: string | null = null;
let stream: StreamState = initialStream();
let streaming = false;
let lastFailedText: string | null = null;
const drafts = new Map<number, AnnotationDraft>();
const locked = new Set<number>();

function annotatorId(): string {
  return localStorage.getItem("annotator_id") || "anonymous";
}

function banner(text: string, kind: "error" | "info" = "info") {
  const box = el("banner");
  box.textContent = text;
  box.className = kind;
  box.style.display = text ? "block" : "none";
}

async function startSession() {
  try {
    sessionId = await createSession(
      BASE,
      input("user-profile").value,
      input("bot-profile").value,
    );
    banner("");
    el("profiles-display").textContent = [
      input("user-profile").value && `you: ${input("user-profile").value}`,
      input("bot-profile").value && `bot: ${input("bot-profile").value}`,
    ]
      .filter(Boolean)
      .join("\n");
    drafts.clear();
    locked.clear();
    await refresh();
  } catch (err) {
    banner(`server unreachable: ${err}`, "error");
  }
}

async function refresh() {
  if (!sessionId) return;
  const snapshot = await fetchExport(BASE, sessionId);
  renderTranscript(snapshot.turns, snapshot.annotations);
}

function provenanceLine(meta: { query: string | null; docs: string[] } | null): string {
  if (!meta || meta.query === null) return "";
  return `searched: ${meta.query} → ${meta.docs.length} docs`;
}

function renderTranscript(turns: UiTurn[], annotations: AnnotationLine[]) {
  const box = el("messages");
  box.innerHTML = "";
  const latest = new Map<string, AnnotationLine>();
  for (const ann of annotations) latest.set(`${ann.turn_index}:${ann.annotator_id}`, ann);
  for (const turn of turns) {
    const div = document.createElement("div");
    div.className = `msg ${turn.role}`;
    const text = document.createElement("div");
    text.className = "text";
    text.textContent = turn.text;
    div.appendChild(text);
    if (turn.role === "bot" && turn.meta && turn.meta.query) {
      const prov = document.createElement("div");
      prov.className = "provenance";
      prov.textContent = provenanceLine({ query: turn.meta.query, docs: turn.meta.docs ?? [] });
      div.appendChild(prov);
    }
    if (turn.role === "bot") {
      div.appendChild(ratingWidget(turn, turns.length, latest));
    }
    box.appendChild(div);
  }
  box.scrollTop = box.scrollHeight;
}

function ratingWidget(
  turn: UiTurn,
  turnCount: number,
  latest: Map<string, AnnotationLine>,
): HTMLElement {
  const wrap = document.createElement("div");
  wrap.className = "rating";
  const existing = latest.get(`${turn.index}:${annotatorId()}`);
  const isLocked = locked.has(turn.index) || (!!existing && !drafts.has(turn.index));
  if (isLocked && existing) {
    const summary = document.createElement("span");
    summary.textContent =
      BINARY_ASPECTS.map((a) => `${a[0]}=${(existing as any)[a]}`).join(" ") +
      (existing.overall !== null && existing.overall !== undefined
        ? ` overall=${existing.overall}`
        : "");
    wrap.appendChild(summary);
    const edit = document.createElement("button");
    edit.textContent = "edit";
    edit.onclick = () => {
      locked.delete(turn.index);
      const draft = emptyDraft();
      for (const aspect of BINARY_ASPECTS) draft.toggles[aspect] = (existing as any)[aspect];
      draft.overall = (existing.overall as 0 | 1 | 2 | null) ?? null;
      drafts.set(turn.index, draft);
      refresh();
    };
    wrap.appendChild(edit);
    return wrap;
  }
  const draft = drafts.get(turn.index) ?? emptyDraft();
  drafts.set(turn.index, draft);
  for (const aspect of BINARY_ASPECTS) {
    const label = document.createElement("label");
    label.textContent = aspect;
    for (const value of [0, 1] as const) {
      const btn = document.createElement("button");
      btn.textContent = String(value);
      btn.className = draft.toggles[aspect] === value ? "on" : "";
      btn.onclick = () => {
        draft.toggles[aspect] = value;
        refresh();
      };
      label.appendChild(btn);
    }
    wrap.appendChild(label);
  }
  if (input("preset-letter").checked) {
    const label = document.createElement("label");
    label.textContent = "rating";
    for (const letter of ["A", "B", "C", "D"] as const) {
      const btn = document.createElement("button");
      btn.textContent = letter;
      btn.className = draft.letter === letter ? "on" : "";
      btn.onclick = () => {
        draft.letter = letter;
        refresh();
      };
      label.appendChild(btn);
    }
    wrap.appendChild(label);
  }
  if (overallEligible(turnCount, turn.index)) {
    const label = document.createElement("label");
    label.textContent = "overall";
    for (const value of [0, 1, 2] as const) {
      const btn = document.createElement("button");
      btn.textContent = String(value);
      btn.className = draft.overall === value ? "on" : "";
      btn.onclick = () => {
        draft.overall = value;
        refresh();
      };
      label.appendChild(btn);
    }
    wrap.appendChild(label);
  }
  const submit = document.createElement("button");
  submit.textContent = "submit";
  submit.disabled = !canSubmit(draft);
  submit.onclick = async () => {
    if (!sessionId) return;
    try {
      await submitRating(BASE, draftToBody(draft, sessionId, turn.index, annotatorId()));
      drafts.delete(turn.index);
      locked.add(turn.index);
      banner("");
      await refresh();
    } catch (err) {
      banner(`rating rejected: ${err}`, "error");
    }
  };
  wrap.appendChild(submit);
  return wrap;
}

function renderStreaming() {
  const box = el("streaming");
  if (!streaming && stream.phase !== "error") {
    box.style.display = "none";
    return;
  }
  box.style.display = "block";
  const prov = provenanceLine(stream.provenance);
  el("stream-provenance").textContent = prov;
  el("stream-text").textContent = stream.partial;
  const retry = el("retry");
  retry.style.display = stream.phase === "error" ? "inline-block" : "none";
  if (stream.phase === "error") {
    banner(`stream failed: ${stream.error}`, "error");
  }
}

async function send(textOverride?: string) {
  const text = textOverride ?? input("composer").value;
  if (!sessionId) {
    banner("start a session first", "error");
    return;
  }
  if (!text.trim() || streaming) return;
  input("composer").value = "";
  streaming = true;
  lastFailedText = text;
  stream = initialStream();
  renderStreaming();
  openStream(BASE, sessionId, text, input("search-toggle").checked, {
    onEvent: (event, data) => {
      stream = applyStreamEvent(stream, event, data);
      renderStreaming();
    },
    onClose: async () => {
      streaming = false;
      if (stream.phase === "done") {
        lastFailedText = null;
        stream = initialStream();
        await refresh();
      }
      renderStreaming();
    },
  });
}

async function downloadExport() {
  if (!sessionId) return;
  const raw = await fetchExportRaw(BASE, sessionId);
  const blob = new Blob([raw], { type: "application/x-ndjson" });
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = `${sessionId}.jsonl`;
  a.click();
  URL.revokeObjectURL(a.href);
}

function init() {
  el("start-session").onclick = () => void startSession();
  el("send").onclick = () => void send();
  input("composer").addEventListener("keydown", (event) => {
    if (event.key === "Enter") void send();
  });
  el("retry").onclick = () => {
    if (lastFailedText) void send(lastFailedText);
  };
  el("download").onclick = () => void downloadExport();
  input("annotator").value = annotatorId();
  input("annotator").addEventListener("change", () => {
    localStorage.setItem("annotator_id", input("annotator").value || "anonymous");
  });
}

document.addEventListener("DOMContentLoaded", init);
