import { describe, expect, it } from "vitest";
import { InputLatch, attachKeyboard } from "../src/input.js";

describe("InputLatch", () => {
  it("keeps the last key pressed within a tick", () => {
    const latch = new InputLatch();
    expect(latch.press("ArrowUp")).toBe(true);
    expect(latch.press("ArrowLeft")).toBe(true);
    expect(latch.flush()).toBe("left");
  });

  it("flushes to nothing when no key arrived", () => {
    const latch = new InputLatch();
    expect(latch.flush()).toBeNull();
    latch.press("ArrowDown");
    latch.flush();
    expect(latch.flush()).toBeNull();
  });

  it("maps space to interact and ignores other keys", () => {
    const latch = new InputLatch();
    expect(latch.press(" ")).toBe(true);
    expect(latch.flush()).toBe("interact");
    expect(latch.press("x")).toBe(false);
    expect(latch.press("Enter")).toBe(false);
    expect(latch.flush()).toBeNull();
  });

  it("consumes only mapped keydown events", () => {
    const latch = new InputLatch();
    const handlers: ((e: KeyboardEvent) => void)[] = [];
    attachKeyboard(latch, {
      addEventListener: (_type, cb) => handlers.push(cb),
    });
    let prevented = 0;
    const fire = (key: string) => handlers[0]({
      key, preventDefault: () => { prevented += 1; },
    } as unknown as KeyboardEvent);
    fire("ArrowRight");
    fire("q");
    expect(prevented).toBe(1);
    expect(latch.flush()).toBe("right");
  });
});
