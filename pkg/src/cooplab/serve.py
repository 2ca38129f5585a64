"""Human-play sessions: fixed-tick kitchen episodes over a socket.

One process serves many isolated sessions. Each connection gets its own
state machine: a round per served policy (order shuffled per session,
permutation logged), each round a fixed-tick episode where the human
seat applies the most recent action received during the tick window
(stay otherwise) and the policy seat plays from its checkpoint. After
every round the client submits a seven-item survey; the session then
advances. Replays and surveys land as flat files under the output
directory, one subdirectory per session.

Transports share one port. A connection that opens with an HTTP GET is
either upgraded to a WebSocket (RFC 6455, text frames) or answered from
the static directory, so the browser client and its data channel come
from the same address. Anything else is treated as newline-delimited
JSON. Both transports carry identical messages.

Wire protocol, server to client: ``hello{session_id, layout, horizon,
tick_ms}``, ``state{t, grid, agents, pots, counters, score}``,
``round_end{score}``, ``bye``. Client to server: ``act{action_id}``,
``survey{answers}``, ``quit``. Unknown fields are ignored; a malformed
message draws an ``error`` reply and the session continues.

Replays are deterministic: the stored human action stream, checkpoint
path, and seed reproduce the stored trajectory exactly, which
``verify_replay`` checks tick by tick.
"""

from __future__ import annotations

import asyncio
import base64
import dataclasses
import hashlib
import json
import os
import secrets
import struct

import numpy as np

from .checkpoint import load_policy
from .core import ConfigError
from .evaluation import LIKERT_MAX, LIKERT_MIN, SURVEY_METRICS, SurveyTable
from .nets import NetPolicy
from .overcooked import (ACTION_NAMES, ITEM_NAMES, STAY, OvercookedConfig,
                         OvercookedEnv)
from .procgen import Layout, decode_layout_line, encode_layout_line

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
_CONTENT_TYPES = {".html": "text/html; charset=utf-8",
                  ".js": "text/javascript; charset=utf-8",
                  ".css": "text/css; charset=utf-8",
                  ".map": "application/json",
                  ".json": "application/json",
                  ".svg": "image/svg+xml",
                  ".png": "image/png",
                  ".ico": "image/x-icon"}


# ------------------------------------------------------------------ config

@dataclasses.dataclass(frozen=True)
class ServeConfig:
    """Everything a session needs; checkpoints are shared and immutable."""

    checkpoints: tuple[tuple[str, str], ...]   # (name, path)
    layouts: tuple[Layout, ...]
    out_dir: str
    horizon: int = 200
    tick_ms: int = 200
    seed: int = 0
    oc: OvercookedConfig | None = None
    static_dir: str | None = None

    def __post_init__(self):
        if not self.checkpoints:
            raise ConfigError("serve needs at least one checkpoint")
        if not self.layouts:
            raise ConfigError("serve needs at least one layout")
        if self.horizon < 1 or self.tick_ms < 1:
            raise ConfigError("horizon and tick_ms must be positive")

    def episode_config(self) -> OvercookedConfig:
        base = self.oc or OvercookedConfig()
        return dataclasses.replace(base, horizon=self.horizon)


def _seed_int(*coords: int) -> int:
    return int(np.random.SeedSequence(list(coords)).generate_state(
        1, np.uint64)[0] >> 1)


def _sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return "sha256:" + digest.hexdigest()


# ------------------------------------------------------------------ session

def _state_message(env: OvercookedEnv, score: float) -> dict:
    state = env.state
    layout = env.layout
    return {
        "type": "state",
        "t": state.t,
        "grid": layout.grid_rows(),
        "agents": [{"pos": list(state.positions[k]),
                    "dir": int(state.orientations[k]),
                    "held": ITEM_NAMES[state.held[k]]} for k in (0, 1)],
        "pots": [{"pos": list(cell),
                  "count": int(state.pot_counts[cell]),
                  "timer": int(state.pot_timers[cell])}
                 for cell in sorted(state.pot_counts)],
        "counters": [{"pos": list(cell), "item": ITEM_NAMES[item]}
                     for cell, item in sorted(state.counter_items.items())],
        "score": score,
    }


class Session:
    """One participant's rounds; transport-agnostic.

    The owner feeds inbound messages to on_message and awaits run();
    outbound messages go through the supplied coroutine.
    """

    def __init__(self, session_id: str, config: ServeConfig, send,
                 tick_sleep=None):
        self.id = session_id
        self.config = config
        self.send = send
        self.tick_sleep = tick_sleep
        self.pending_action: int | None = None
        self.survey_box: asyncio.Queue = asyncio.Queue()
        self.quit = False
        self.in_round = False
        rng = np.random.default_rng(
            np.random.SeedSequence([config.seed, _session_number(session_id)]))
        self.order = [int(i) for i in rng.permutation(len(config.checkpoints))]
        self.layout_picks = [int(rng.integers(len(config.layouts)))
                             for _ in self.order]
        self.human_seats = [int(rng.integers(2)) for _ in self.order]
        self.dir = os.path.join(config.out_dir, "sessions", session_id)
        os.makedirs(self.dir, exist_ok=True)
        self.survey_rows: list[tuple[str, list[int]]] = []

    # -- inbound ----------------------------------------------------

    async def on_message(self, message) -> None:
        if not isinstance(message, dict) or "type" not in message:
            await self.send({"type": "error", "reason": "not an object "
                             "with a type field"})
            return
        kind = message["type"]
        if kind == "act":
            action = message.get("action_id")
            if not isinstance(action, int) or not 0 <= action < len(ACTION_NAMES):
                await self.send({"type": "error",
                                 "reason": f"bad action_id {action!r}"})
                return
            if self.in_round:
                self.pending_action = action
        elif kind == "survey":
            answers = message.get("answers")
            ok = (isinstance(answers, list)
                  and len(answers) == len(SURVEY_METRICS)
                  and all(isinstance(a, int) and LIKERT_MIN <= a <= LIKERT_MAX
                          for a in answers))
            if not ok:
                await self.send({"type": "error", "reason":
                                 f"survey wants {len(SURVEY_METRICS)} integers "
                                 f"in [{LIKERT_MIN},{LIKERT_MAX}]"})
                return
            await self.survey_box.put(list(answers))
        elif kind == "quit":
            self.quit = True
            await self.survey_box.put(None)
        else:
            await self.send({"type": "error", "reason": f"unknown type {kind!r}"})

    # -- rounds -----------------------------------------------------

    async def run(self) -> None:
        for round_idx, model_idx in enumerate(self.order):
            if self.quit:
                break
            await self._play_round(round_idx, model_idx)
            if self.quit:
                break
            answers = await self.survey_box.get()
            if answers is None:
                break
            name = self.config.checkpoints[model_idx][0]
            self.survey_rows.append((name, answers))
            self._write_surveys()
        await self.send({"type": "bye"})
        self._write_log()

    async def _play_round(self, round_idx: int, model_idx: int) -> None:
        config = self.config
        name, ckpt_path = config.checkpoints[model_idx]
        layout = config.layouts[self.layout_picks[round_idx]]
        human_seat = self.human_seats[round_idx]
        seed = _seed_int(config.seed, _session_number(self.id), round_idx)
        policy = load_policy(ckpt_path)
        env = OvercookedEnv(layout, config=config.episode_config())
        epoch = _RoundRecorder(self, round_idx, name, ckpt_path, layout,
                               human_seat, seed)
        await self.send({"type": "hello", "session_id": self.id,
                         "layout": layout.grid_rows(),
                         "horizon": config.horizon,
                         "tick_ms": config.tick_ms,
                         "round": round_idx, "rounds": len(self.order),
                         "actions": list(ACTION_NAMES),
                         "items": list(ITEM_NAMES)})
        score = await self._tick_loop(env, policy, human_seat, seed, epoch)
        await self.send({"type": "round_end", "score": score})
        epoch.write(score, env.state.deliveries)

    async def _tick_loop(self, env, policy: NetPolicy, human_seat: int,
                         seed: int, epoch) -> float:
        config = self.config
        rng = np.random.default_rng(np.random.SeedSequence([seed]))
        obs = env.reset(rng)
        hidden = policy.initial_state(1)
        ep_start = np.array([True])
        score = 0.0
        tick = config.tick_ms / 1000.0
        loop = asyncio.get_running_loop()
        deadline = loop.time()
        self.pending_action = None
        self.in_round = True
        try:
            await self.send(_state_message(env, score))
            for _ in range(config.horizon):
                deadline += tick
                if self.tick_sleep is not None:
                    await self.tick_sleep(tick)
                else:
                    delay = deadline - loop.time()
                    if delay > 0:
                        await asyncio.sleep(delay)
                if self.quit:
                    break
                human = self.pending_action
                self.pending_action = None
                human = STAY if human is None else human
                acts, _, _, hidden = policy.act(
                    obs[None, 1 - human_seat], hidden, ep_start, rng)
                ep_start[0] = False
                joint = [0, 0]
                joint[human_seat] = human
                joint[1 - human_seat] = int(acts[0])
                obs, reward, done, _ = env.step(joint[0], joint[1])
                score += float(reward)
                epoch.record(human, int(acts[0]), float(reward))
                await self.send(_state_message(env, score))
                if done:
                    break
        finally:
            self.in_round = False
        return score

    # -- persistence ------------------------------------------------

    def _write_surveys(self) -> None:
        if not self.survey_rows:
            return
        table = SurveyTable(
            participants=tuple(self.id for _ in self.survey_rows),
            models=tuple(name for name, _ in self.survey_rows),
            answers=np.array([a for _, a in self.survey_rows], dtype=np.int64))
        table.to_csv(os.path.join(self.dir, "surveys.csv"))

    def _write_log(self) -> None:
        log = {"session": self.id,
               "model_order": [self.config.checkpoints[i][0] for i in self.order],
               "layout_picks": self.layout_picks,
               "human_seats": self.human_seats,
               "completed_surveys": len(self.survey_rows)}
        with open(os.path.join(self.dir, "session.json"), "w") as fh:
            json.dump(log, fh, indent=2, sort_keys=True)
            fh.write("\n")


class _RoundRecorder:
    """Accumulates one round's tick records and writes the replay file."""

    def __init__(self, session: Session, round_idx: int, model: str,
                 ckpt_path: str, layout: Layout, human_seat: int, seed: int):
        self.session = session
        self.round_idx = round_idx
        self.model = model
        self.ckpt_path = os.path.abspath(ckpt_path)
        self.layout = layout
        self.human_seat = human_seat
        self.seed = seed
        self.human_actions: list[int] = []
        self.policy_actions: list[int] = []
        self.rewards: list[float] = []

    def record(self, human: int, policy: int, reward: float) -> None:
        self.human_actions.append(human)
        self.policy_actions.append(policy)
        self.rewards.append(reward)

    def write(self, score: float, deliveries: int) -> str:
        oc = self.session.config.episode_config()
        record = {
            "session": self.session.id,
            "round": self.round_idx,
            "model": self.model,
            "ckpt": self.ckpt_path,
            "ckpt_sha": _sha256_file(self.ckpt_path),
            "layout": encode_layout_line(self.layout),
            "recipe": dataclasses.asdict(oc),
            "tick_ms": self.session.config.tick_ms,
            "seed": self.seed,
            "human_seat": self.human_seat,
            "human_actions": self.human_actions,
            "policy_actions": self.policy_actions,
            "rewards": self.rewards,
            "score": score,
            "deliveries": deliveries,
        }
        path = os.path.join(self.session.dir, f"round_{self.round_idx}.json")
        with open(path, "w") as fh:
            json.dump(record, fh)
            fh.write("\n")
        return path


_session_counter = 0


def _session_number(session_id: str) -> int:
    return int(session_id.split("-")[0][1:])


def _new_session_id() -> str:
    global _session_counter
    _session_counter += 1
    return f"s{_session_counter:05d}-{secrets.token_hex(4)}"


# ------------------------------------------------------------------ replay

@dataclasses.dataclass(frozen=True)
class ReplayCheck:
    ok: bool
    ticks: int
    score: float
    first_divergence: int | None = None


def verify_replay(path: str | os.PathLike) -> ReplayCheck:
    """Re-simulate a stored round and compare it tick by tick.

    The stored human action stream plus the checkpoint and seed must
    reproduce the stored policy actions, rewards, and final score.
    """
    with open(path) as fh:
        record = json.load(fh)
    ckpt = record["ckpt"]
    if not os.path.isabs(ckpt):
        ckpt = os.path.join(os.path.dirname(os.path.abspath(path)), ckpt)
    policy = load_policy(ckpt)
    layout = decode_layout_line(record["layout"])
    env = OvercookedEnv(layout, config=OvercookedConfig(**record["recipe"]))
    rng = np.random.default_rng(np.random.SeedSequence([record["seed"]]))
    obs = env.reset(rng)
    hidden = policy.initial_state(1)
    ep_start = np.array([True])
    human_seat = record["human_seat"]
    score = 0.0
    for t, human in enumerate(record["human_actions"]):
        acts, _, _, hidden = policy.act(obs[None, 1 - human_seat], hidden,
                                        ep_start, rng)
        ep_start[0] = False
        joint = [0, 0]
        joint[human_seat] = int(human)
        joint[1 - human_seat] = int(acts[0])
        obs, reward, done, _ = env.step(joint[0], joint[1])
        score += float(reward)
        if (int(acts[0]) != record["policy_actions"][t]
                or abs(float(reward) - record["rewards"][t]) > 1e-9):
            return ReplayCheck(ok=False, ticks=t + 1, score=score,
                               first_divergence=t)
    if abs(score - record["score"]) > 1e-6:
        return ReplayCheck(ok=False, ticks=len(record["human_actions"]),
                           score=score,
                           first_divergence=len(record["human_actions"]))
    return ReplayCheck(ok=True, ticks=len(record["human_actions"]), score=score)


# ------------------------------------------------------------------ websocket

class _WebSocketError(ConnectionError):
    pass


async def _ws_read_frame(reader) -> tuple[int, bytes]:
    head = await reader.readexactly(2)
    opcode = head[0] & 0x0F
    masked = head[1] & 0x80
    length = head[1] & 0x7F
    if length == 126:
        length = struct.unpack(">H", await reader.readexactly(2))[0]
    elif length == 127:
        length = struct.unpack(">Q", await reader.readexactly(8))[0]
    if length > 1 << 20:
        raise _WebSocketError("frame too large")
    mask = await reader.readexactly(4) if masked else b""
    payload = await reader.readexactly(length)
    if masked:
        payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    return opcode, payload


def _ws_frame(opcode: int, payload: bytes) -> bytes:
    head = bytes([0x80 | opcode])
    n = len(payload)
    if n < 126:
        head += bytes([n])
    elif n < 1 << 16:
        head += bytes([126]) + struct.pack(">H", n)
    else:
        head += bytes([127]) + struct.pack(">Q", n)
    return head + payload


def _ws_accept_key(key: str) -> str:
    digest = hashlib.sha1((key + _WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


# ------------------------------------------------------------------ server

class _LineTransport:
    def __init__(self, reader, writer):
        self.reader = reader
        self.writer = writer

    async def send(self, message: dict) -> None:
        self.writer.write(json.dumps(message).encode() + b"\n")
        await self.writer.drain()

    async def messages(self):
        while True:
            line = await self.reader.readline()
            if not line:
                return
            yield line.decode("utf-8", "replace")


class _WsTransport:
    def __init__(self, reader, writer):
        self.reader = reader
        self.writer = writer

    async def send(self, message: dict) -> None:
        self.writer.write(_ws_frame(1, json.dumps(message).encode()))
        await self.writer.drain()

    async def messages(self):
        while True:
            try:
                opcode, payload = await _ws_read_frame(self.reader)
            except (asyncio.IncompleteReadError, _WebSocketError):
                return
            if opcode == 8:
                self.writer.write(_ws_frame(8, b""))
                await self.writer.drain()
                return
            if opcode == 9:
                self.writer.write(_ws_frame(10, payload))
                await self.writer.drain()
                continue
            if opcode in (1, 2):
                yield payload.decode("utf-8", "replace")


async def _read_http_headers(reader) -> dict:
    headers = {}
    while True:
        line = await reader.readline()
        if line in (b"\r\n", b"\n", b""):
            return headers
        name, _, value = line.decode("latin-1").partition(":")
        headers[name.strip().lower()] = value.strip()


async def _serve_static(writer, static_dir: str | None, target: str) -> None:
    path = target.split("?", 1)[0]
    if path.endswith("/"):
        path += "index.html"
    body, status, ctype = b"not found", "404 Not Found", "text/plain"
    if static_dir is not None:
        full = os.path.realpath(os.path.join(static_dir, path.lstrip("/")))
        root = os.path.realpath(static_dir)
        if full.startswith(root + os.sep) or full == root:
            if os.path.isfile(full):
                with open(full, "rb") as fh:
                    body = fh.read()
                status = "200 OK"
                ctype = _CONTENT_TYPES.get(os.path.splitext(full)[1],
                                           "application/octet-stream")
    writer.write((f"HTTP/1.1 {status}\r\ncontent-type: {ctype}\r\n"
                  f"content-length: {len(body)}\r\n"
                  "connection: close\r\n\r\n").encode() + body)
    await writer.drain()
    writer.close()


class Server:
    """Accepts connections and runs one Session per client."""

    def __init__(self, config: ServeConfig):
        self.config = config
        os.makedirs(os.path.join(config.out_dir, "sessions"), exist_ok=True)

    async def handle(self, reader: asyncio.StreamReader,
                     writer: asyncio.StreamWriter) -> None:
        # A client that opens silently is a line-JSON session waiting for
        # hello; HTTP and eager line clients reveal themselves in the
        # first line. The sniff window only delays the silent case.
        try:
            try:
                first = await asyncio.wait_for(reader.readline(), timeout=0.25)
            except asyncio.TimeoutError:
                first = None
            if first is not None and not first:
                writer.close()
                return
            text = None if first is None else first.decode("latin-1", "replace")
            if text is not None and text.startswith(("GET ", "HEAD ", "POST ")):
                await self._handle_http(reader, writer, text)
            else:
                transport = _LineTransport(reader, writer)
                await self._run_session(transport, prefix=text)
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            try:
                writer.close()
            except Exception:
                pass

    async def _handle_http(self, reader, writer, request_line: str) -> None:
        method, target = request_line.split()[0:2]
        headers = await _read_http_headers(reader)
        if (method == "GET"
                and headers.get("upgrade", "").lower() == "websocket"
                and "sec-websocket-key" in headers):
            accept = _ws_accept_key(headers["sec-websocket-key"])
            writer.write(("HTTP/1.1 101 Switching Protocols\r\n"
                          "upgrade: websocket\r\nconnection: Upgrade\r\n"
                          f"sec-websocket-accept: {accept}\r\n\r\n").encode())
            await writer.drain()
            await self._run_session(_WsTransport(reader, writer))
            return
        await _serve_static(writer, self.config.static_dir, target)

    async def _run_session(self, transport, prefix: str | None = None) -> None:
        session = Session(_new_session_id(), self.config, transport.send)

        async def pump():
            if prefix is not None:
                await _dispatch_line(session, transport, prefix)
            async for line in transport.messages():
                await _dispatch_line(session, transport, line)
            session.quit = True
            await session.survey_box.put(None)

        pump_task = asyncio.create_task(pump())
        try:
            await session.run()
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            pump_task.cancel()


async def _dispatch_line(session: Session, transport, line: str) -> None:
    line = line.strip()
    if not line:
        return
    try:
        message = json.loads(line)
    except json.JSONDecodeError:
        await transport.send({"type": "error", "reason": "malformed json"})
        return
    await session.on_message(message)


async def serve_forever(config: ServeConfig, port: int,
                        host: str = "127.0.0.1") -> None:
    server = Server(config)
    runner = await asyncio.start_server(server.handle, host, port)
    addr = ", ".join(str(s.getsockname()) for s in runner.sockets)
    print(f"serving on {addr} "
          f"({len(config.checkpoints)} models, {len(config.layouts)} layouts)")
    async with runner:
        await runner.serve_forever()


def run_server(config: ServeConfig, port: int, host: str = "127.0.0.1") -> None:
    try:
        asyncio.run(serve_forever(config, port, host))
    except KeyboardInterrupt:
        pass
