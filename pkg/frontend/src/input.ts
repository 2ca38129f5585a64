// Keyboard capture with the last-wins tick rule: the client sends at
// most one act per server tick, carrying the most recent key pressed
// since the previous flush. No key, no message; the server plays stay.

const KEY_TO_ACTION: Record<string, string> = {
  ArrowUp: "up",
  ArrowDown: "down",
  ArrowLeft: "left",
  ArrowRight: "right",
  " ": "interact",
};

export class InputLatch {
  private pending: string | null = null;

  /** Returns true when the key is one of ours (caller preventDefaults). */
  press(key: string): boolean {
    const action = KEY_TO_ACTION[key];
    if (action === undefined) return false;
    this.pending = action;
    return true;
  }

  /** The action name for this tick, or null when no key arrived. */
  flush(): string | null {
    const action = this.pending;
    this.pending = null;
    return action;
  }
}

export function attachKeyboard(latch: InputLatch, target: {
  addEventListener(type: string, cb: (e: KeyboardEvent) => void): void;
}): void {
  target.addEventListener("keydown", (e: KeyboardEvent) => {
    if (latch.press(e.key)) e.preventDefault();
  });
}
