"""Session engine, wire transports, and replay determinism."""

import asyncio
import base64
import hashlib
import json
import os
import struct

import numpy as np
import pytest

from cooplab import nets, procgen, serve
from cooplab.checkpoint import save_checkpoint
from cooplab.evaluation import SURVEY_METRICS, SurveyTable
from cooplab.overcooked import STAY, OvercookedConfig


@pytest.fixture(scope="module")
def ckpt_path(tmp_path_factory):
    root = tmp_path_factory.mktemp("ckpts")
    spec = nets.compact_spec(OvercookedConfig().spec())
    net = nets.PolicyNet(spec, seed=3)
    path = os.path.join(root, "pilot.ckpt")
    save_checkpoint(path, spec, net.state_dict_np(),
                    {"algorithm": "ippo-selfplay", "env_kind": "overcooked",
                     "seed": 3, "steps": 0, "policy_id": "pilot"})
    return path


def make_config(ckpt, out_dir, horizon=6, models=1, **kw):
    layout = procgen.held_out_layouts()[0]
    return serve.ServeConfig(
        checkpoints=tuple((f"m{k}", ckpt) for k in range(models)),
        layouts=(layout,), out_dir=str(out_dir), horizon=horizon,
        tick_ms=200, seed=5, **kw)


async def _no_sleep(_):
    await asyncio.sleep(0)


class Collector:
    def __init__(self):
        self.messages = []

    async def send(self, message):
        self.messages.append(message)

    def of_type(self, kind):
        return [m for m in self.messages if m["type"] == kind]


def drive(config, script):
    """Run a session, feeding messages from an async script(session)."""
    out = Collector()
    session = serve.Session("s00001-abcd", config, out.send,
                            tick_sleep=_no_sleep)

    async def main():
        task = asyncio.create_task(session.run())
        await script(session)
        await asyncio.wait_for(task, timeout=30)

    asyncio.run(main())
    return session, out


def submit_survey(answers=None):
    async def script(session):
        while True:
            await asyncio.sleep(0)
            if session.survey_box.empty() and not session.in_round:
                break
        await session.on_message({"type": "survey",
                                  "answers": answers or [4] * 7})
    return script


# ---------------------------------------------------------------- engine

def test_idle_round_plays_stay_and_persists(tmp_path, ckpt_path):
    config = make_config(ckpt_path, tmp_path, horizon=6)
    session, out = drive(config, submit_survey())
    assert len(out.of_type("hello")) == 1
    states = out.of_type("state")
    assert len(states) == config.horizon + 1
    ts = [m["t"] for m in states]
    assert ts == list(range(config.horizon + 1))
    assert out.of_type("round_end") and out.of_type("bye")
    replay = json.load(open(os.path.join(session.dir, "round_0.json")))
    assert replay["human_actions"] == [STAY] * config.horizon
    assert len(replay["policy_actions"]) == config.horizon


def test_replay_verifies_and_detects_tampering(tmp_path, ckpt_path):
    config = make_config(ckpt_path, tmp_path, horizon=8)
    session, _ = drive(config, submit_survey())
    path = os.path.join(session.dir, "round_0.json")
    check = serve.verify_replay(path)
    assert check.ok and check.ticks == 8

    record = json.load(open(path))
    record["policy_actions"][3] = (record["policy_actions"][3] + 1) % 6
    tampered = os.path.join(str(tmp_path), "tampered.json")
    with open(tampered, "w") as fh:
        json.dump(record, fh)
    bad = serve.verify_replay(tampered)
    assert not bad.ok and bad.first_divergence == 3


def test_survey_round_trip_and_validation(tmp_path, ckpt_path):
    config = make_config(ckpt_path, tmp_path, horizon=4)
    session, out = drive(config, submit_survey([1, 7, 3, 4, 5, 6, 2]))
    table = SurveyTable.from_csv(os.path.join(session.dir, "surveys.csv"))
    assert table.answers.tolist() == [[1, 7, 3, 4, 5, 6, 2]]
    assert table.models == ("m0",)

    config2 = make_config(ckpt_path, tmp_path / "b", horizon=4)

    async def script(session):
        while session.in_round or not session.survey_box.empty():
            await asyncio.sleep(0)
        await session.on_message({"type": "survey", "answers": [9] * 7})
        await session.on_message({"type": "survey", "answers": [4] * 6})
        await session.on_message({"type": "survey", "answers": [4] * 7})

    _, out2 = drive(config2, script)
    reasons = [m["reason"] for m in out2.of_type("error")]
    assert len(reasons) == 2


def test_malformed_and_unknown_messages_keep_session_alive(tmp_path, ckpt_path):
    config = make_config(ckpt_path, tmp_path, horizon=4)

    async def script(session):
        await session.on_message([1, 2, 3])
        await session.on_message({"type": "dance"})
        await session.on_message({"type": "act", "action_id": 99})
        while session.in_round or not session.survey_box.empty():
            await asyncio.sleep(0)
        await session.on_message({"type": "survey", "answers": [4] * 7})

    session, out = drive(config, script)
    assert len(out.of_type("error")) == 3
    assert out.of_type("bye")


def test_quit_ends_session_early(tmp_path, ckpt_path):
    config = make_config(ckpt_path, tmp_path, horizon=4, models=3)

    async def script(session):
        while not session.in_round:
            await asyncio.sleep(0)
        await session.on_message({"type": "quit"})

    session, out = drive(config, script)
    assert out.of_type("bye")
    assert len(out.of_type("hello")) == 1
    assert session.survey_rows == []


def test_model_order_is_logged_permutation(tmp_path, ckpt_path):
    config = make_config(ckpt_path, tmp_path, horizon=2, models=4)

    async def script(session):
        for _ in range(4):
            while session.in_round or not session.survey_box.empty():
                await asyncio.sleep(0)
            await session.on_message({"type": "survey", "answers": [4] * 7})

    session, out = drive(config, script)
    log = json.load(open(os.path.join(session.dir, "session.json")))
    assert sorted(log["model_order"]) == ["m0", "m1", "m2", "m3"]
    assert len(out.of_type("hello")) == 4
    assert log["completed_surveys"] == 4


# ---------------------------------------------------------------- sockets

async def _read_json_line(reader):
    line = await asyncio.wait_for(reader.readline(), timeout=20)
    assert line, "connection closed early"
    return json.loads(line)


def test_line_transport_session(tmp_path, ckpt_path):
    layout = procgen.held_out_layouts()[0]
    config = serve.ServeConfig(checkpoints=(("m0", ckpt_path),),
                               layouts=(layout,), out_dir=str(tmp_path),
                               horizon=5, tick_ms=10, seed=5)

    async def main():
        server = serve.Server(config)
        runner = await asyncio.start_server(server.handle, "127.0.0.1", 0)
        port = runner.sockets[0].getsockname()[1]
        reader, writer = await asyncio.open_connection("127.0.0.1", port)
        hello = await _read_json_line(reader)
        assert hello["type"] == "hello" and hello["horizon"] == 5
        writer.write(json.dumps({"type": "act", "action_id": 0}).encode() + b"\n")
        await writer.drain()
        seen = []
        while True:
            msg = await _read_json_line(reader)
            if msg["type"] == "round_end":
                break
            assert msg["type"] == "state"
            seen.append(msg["t"])
        assert seen == list(range(6))
        writer.write(json.dumps({"type": "survey",
                                 "answers": [4] * 7}).encode() + b"\n")
        await writer.drain()
        bye = await _read_json_line(reader)
        assert bye["type"] == "bye"
        writer.close()
        runner.close()
        await runner.wait_closed()

    asyncio.run(main())


def _ws_client_frame(payload: bytes) -> bytes:
    mask = b"\x11\x22\x33\x44"
    masked = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    n = len(payload)
    if n < 126:
        head = bytes([0x81, 0x80 | n])
    else:
        head = bytes([0x81, 0x80 | 126]) + struct.pack(">H", n)
    return head + mask + masked


async def _ws_read_message(reader):
    head = await asyncio.wait_for(reader.readexactly(2), timeout=20)
    length = head[1] & 0x7F
    if length == 126:
        length = struct.unpack(">H", await reader.readexactly(2))[0]
    elif length == 127:
        length = struct.unpack(">Q", await reader.readexactly(8))[0]
    payload = await reader.readexactly(length)
    return head[0] & 0x0F, payload


def test_websocket_handshake_and_hello(tmp_path, ckpt_path):
    layout = procgen.held_out_layouts()[0]
    config = serve.ServeConfig(checkpoints=(("m0", ckpt_path),),
                               layouts=(layout,), out_dir=str(tmp_path),
                               horizon=3, tick_ms=10, seed=5)

    async def main():
        server = serve.Server(config)
        runner = await asyncio.start_server(server.handle, "127.0.0.1", 0)
        port = runner.sockets[0].getsockname()[1]
        reader, writer = await asyncio.open_connection("127.0.0.1", port)
        key = base64.b64encode(b"0123456789abcdef").decode()
        writer.write((f"GET /ws HTTP/1.1\r\nhost: x\r\nupgrade: websocket\r\n"
                      f"connection: Upgrade\r\nsec-websocket-key: {key}\r\n"
                      "\r\n").encode())
        await writer.drain()
        status = await reader.readline()
        assert b"101" in status
        accept_expected = base64.b64encode(hashlib.sha1(
            (key + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11").encode()
        ).digest()).decode()
        headers = {}
        while True:
            line = await reader.readline()
            if line in (b"\r\n", b""):
                break
            name, _, val = line.decode().partition(":")
            headers[name.strip().lower()] = val.strip()
        assert headers["sec-websocket-accept"] == accept_expected
        opcode, payload = await _ws_read_message(reader)
        assert opcode == 1
        hello = json.loads(payload)
        assert hello["type"] == "hello"
        writer.write(_ws_client_frame(
            json.dumps({"type": "quit"}).encode()))
        await writer.drain()
        writer.close()
        runner.close()
        await runner.wait_closed()

    asyncio.run(main())


def test_static_file_serving(tmp_path, ckpt_path):
    static = tmp_path / "static"
    static.mkdir()
    (static / "index.html").write_text("<h1>kitchen</h1>")
    layout = procgen.held_out_layouts()[0]
    config = serve.ServeConfig(checkpoints=(("m0", ckpt_path),),
                               layouts=(layout,), out_dir=str(tmp_path),
                               horizon=3, tick_ms=10, seed=5,
                               static_dir=str(static))

    async def main():
        server = serve.Server(config)
        runner = await asyncio.start_server(server.handle, "127.0.0.1", 0)
        port = runner.sockets[0].getsockname()[1]
        reader, writer = await asyncio.open_connection("127.0.0.1", port)
        writer.write(b"GET / HTTP/1.1\r\nhost: x\r\n\r\n")
        await writer.drain()
        raw = await asyncio.wait_for(reader.read(), timeout=20)
        assert b"200 OK" in raw and b"<h1>kitchen</h1>" in raw
        reader2, writer2 = await asyncio.open_connection("127.0.0.1", port)
        writer2.write(b"GET /../secret HTTP/1.1\r\nhost: x\r\n\r\n")
        await writer2.drain()
        raw2 = await asyncio.wait_for(reader2.read(), timeout=20)
        assert b"404" in raw2
        writer.close()
        writer2.close()
        runner.close()
        await runner.wait_closed()

    asyncio.run(main())
