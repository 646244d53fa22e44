export type Role = "user" | "bot";

export interface UiTurn {
  index: number;
  role: Role;
  text: string;
  meta?: TurnMeta | null;
}

export interface TurnMeta {
  query: string | null;
  docs: string[];
  gated?: boolean;
}

export interface ChatResponse {
  reply: string;
  query: { text: string; origin: string } | null;
  docs: { id: string; title: string; score: number }[];
  timing: { first_token: number; total: number };
  turn_index: number;
  gated: boolean;
}

export interface SessionInfo {
  session_id: string;
  user_profile: string;
  bot_profile: string;
}

export type BinaryAspect =
  | "coherence"
  | "informativeness"
  | "hallucination"
  | "safety"
  | "persona";

export const BINARY_ASPECTS: BinaryAspect[] = [
  "coherence",
  "informativeness",
  "hallucination",
  "safety",
  "persona",
];

export type RatingLetter = "A" | "B" | "C" | "D";

export interface AnnotationDraft {
  toggles: Partial<Record<BinaryAspect, 0 | 1>>;
  overall: 0 | 1 | 2 | null;
  letter: RatingLetter | null; // alternative four-level preset
}

export interface AnnotationLine {
  turn_index: number;
  coherence: number;
  informativeness: number;
  hallucination: number;
  safety: number;
  persona: number;
  overall: number | null;
  annotator_id: string;
  rating_letter?: RatingLetter | null;
}

export interface ExportSnapshot {
  session: SessionInfo | null;
  turns: UiTurn[];
  annotations: AnnotationLine[];
}
