// Wire protocol types. The server speaks line-delimited JSON over a raw
// socket or single-frame JSON over a websocket; the shapes are identical.

export interface HelloMsg {
  type: "hello";
  session_id: string;
  layout: string[];
  horizon: number;
  tick_ms: number;
  round: number;
  rounds: number;
  actions: string[];
  items: string[];
}

export interface AgentView {
  pos: [number, number];
  dir: number;
  held: string;
}

export interface PotView {
  pos: [number, number];
  count: number;
  timer: number;
}

export interface CounterView {
  pos: [number, number];
  item: string;
}

export interface StateMsg {
  type: "state";
  t: number;
  grid: string[];
  agents: AgentView[];
  pots: PotView[];
  counters: CounterView[];
  score: number;
}

export interface RoundEndMsg {
  type: "round_end";
  score: number;
}

export interface ErrorMsg {
  type: "error";
  reason: string;
}

export interface ByeMsg {
  type: "bye";
}

export type ServerMessage = HelloMsg | StateMsg | RoundEndMsg | ErrorMsg | ByeMsg;

export interface ActMsg {
  type: "act";
  action_id: number;
}

export interface SurveyMsg {
  type: "survey";
  answers: number[];
}

export interface QuitMsg {
  type: "quit";
}

export type ClientMessage = ActMsg | SurveyMsg | QuitMsg;

const SERVER_TYPES = new Set(["hello", "state", "round_end", "error", "bye"]);

/** Parse one server line. Returns null for anything that is not a
 * well-formed message of a known type; the caller decides whether that
 * is banner-worthy. Unknown extra fields pass through untouched. */
export function parseServerMessage(raw: string): ServerMessage | null {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof data !== "object" || data === null) return null;
  const msg = data as { type?: unknown };
  if (typeof msg.type !== "string" || !SERVER_TYPES.has(msg.type)) return null;
  if (msg.type === "state") {
    const s = msg as Partial<StateMsg>;
    if (typeof s.t !== "number" || !Array.isArray(s.grid)
        || !Array.isArray(s.agents) || !Array.isArray(s.pots)) {
      return null;
    }
  }
  if (msg.type === "hello") {
    const h = msg as Partial<HelloMsg>;
    if (!Array.isArray(h.layout) || typeof h.horizon !== "number"
        || typeof h.tick_ms !== "number" || !Array.isArray(h.actions)) {
      return null;
    }
  }
  return msg as ServerMessage;
}

/** Map semantic action names to the ids the server announced in hello,
 * so a reordered action table on the server side cannot skew inputs. */
export function actionIds(hello: HelloMsg): Map<string, number> {
  const ids = new Map<string, number>();
  hello.actions.forEach((name, i) => ids.set(name, i));
  return ids;
}
