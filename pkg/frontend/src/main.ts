import { actionIds, parseServerMessage } from "./protocol.js";
import { SessionStore } from "./session.js";
import { InputLatch, attachKeyboard } from "./input.js";
import { render, RenderError } from "./renderer.js";
import { buildSurveyForm } from "./survey.js";

// Wiring: one websocket, one store, one canvas. The server is
// authoritative; this loop only mirrors state and forwards inputs.
// Acts are flushed once per received state, which aligns the client to
// the server's tick without a local timer.

const canvas = document.getElementById("board") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const banner = document.getElementById("banner")!;
const surveyBox = document.getElementById("survey")!;
const statusLine = document.getElementById("status")!;

const store = new SessionStore();
const latch = new InputLatch();
attachKeyboard(latch, document);

const proto = location.protocol === "https:" ? "wss" : "ws";
const ws = new WebSocket(`${proto}://${location.host}/`);

let ids = new Map<string, number>();

function showBanner(text: string): void {
  banner.textContent = text;
  banner.classList.remove("hidden");
  setTimeout(() => banner.classList.add("hidden"), 4000);
}

function drawCurrent(): void {
  if (!store.snapshot) return;
  try {
    render(ctx, store.snapshot, {
      timeLeft: store.timeLeft(),
      roundLabel: store.roundLabel(),
    });
  } catch (err) {
    if (err instanceof RenderError) showBanner(`bad frame: ${err.message}`);
    else throw err;
  }
}

ws.addEventListener("message", (event) => {
  const msg = parseServerMessage(String(event.data));
  if (msg === null) {
    showBanner("unreadable message from server");
    return;
  }
  store.handle(msg);
  switch (msg.type) {
    case "hello":
      ids = actionIds(msg);
      surveyBox.innerHTML = "";
      statusLine.textContent = `${store.roundLabel()} — arrows move, space interacts`;
      break;
    case "state": {
      const action = latch.flush();
      if (action !== null && ids.has(action)) {
        ws.send(JSON.stringify({ type: "act", action_id: ids.get(action) }));
      }
      drawCurrent();
      break;
    }
    case "round_end":
      statusLine.textContent = "round over";
      buildSurveyForm(surveyBox, store, (survey) => {
        ws.send(JSON.stringify(survey));
      });
      break;
    case "bye":
      statusLine.textContent = "session complete, thanks for playing";
      ws.close();
      break;
    case "error":
      showBanner(msg.reason);
      break;
  }
});

ws.addEventListener("close", () => {
  if (store.phase !== "done") statusLine.textContent = "connection lost";
});

window.addEventListener("beforeunload", () => {
  if (ws.readyState === WebSocket.OPEN) {
    ws.send(JSON.stringify({ type: "quit" }));
  }
});
