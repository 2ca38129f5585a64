import { HelloMsg, ServerMessage, StateMsg } from "./protocol.js";

export type Phase = "connecting" | "playing" | "survey" | "done";

export const SURVEY_ITEMS = 7;

/** Client-side mirror of one participant session.
 *
 * The store never advances game state on its own: it only swaps in
 * snapshots the server sent, and only when they are newer than what it
 * already shows. Stale frames (reordered or duplicated on the wire) are
 * counted and dropped.
 */
export class SessionStore {
  phase: Phase = "connecting";
  hello: HelloMsg | null = null;
  snapshot: StateMsg | null = null;
  lastScore = 0;
  errors: string[] = [];
  staleDropped = 0;
  receivedTs: number[] = [];

  private answers: (number | null)[] = [];
  private surveySent = false;

  handle(msg: ServerMessage): void {
    switch (msg.type) {
      case "hello":
        this.hello = msg;
        this.snapshot = null;
        this.phase = "playing";
        this.answers = new Array(SURVEY_ITEMS).fill(null);
        this.surveySent = false;
        this.receivedTs = [];
        break;
      case "state":
        if (this.snapshot !== null && msg.t <= this.snapshot.t) {
          this.staleDropped += 1;
          return;
        }
        this.snapshot = msg;
        this.receivedTs.push(msg.t);
        break;
      case "round_end":
        this.lastScore = msg.score;
        this.phase = "survey";
        break;
      case "bye":
        this.phase = "done";
        break;
      case "error":
        this.errors.push(msg.reason);
        break;
    }
  }

  roundLabel(): string {
    if (!this.hello) return "";
    return `round ${this.hello.round + 1} of ${this.hello.rounds}`;
  }

  timeLeft(): number {
    if (!this.hello || !this.snapshot) return 0;
    return this.hello.horizon - this.snapshot.t;
  }

  // -- survey draft ------------------------------------------------

  setAnswer(item: number, value: number): void {
    if (item < 0 || item >= SURVEY_ITEMS) throw new RangeError(`item ${item}`);
    if (!Number.isInteger(value) || value < 1 || value > 7) {
      throw new RangeError(`likert answers are integers in [1,7], got ${value}`);
    }
    this.answers[item] = value;
  }

  surveyComplete(): boolean {
    return this.answers.length === SURVEY_ITEMS
      && this.answers.every((a) => a !== null);
  }

  /** The survey message, handed out at most once per round. */
  takeSurvey(): { type: "survey"; answers: number[] } | null {
    if (this.surveySent || !this.surveyComplete()) return null;
    this.surveySent = true;
    return { type: "survey", answers: this.answers.map((a) => a as number) };
  }
}
