"""Newline-delimited JSON environment server for external agents.

One session owns one environment. Requests are JSON objects with a ``cmd``
field (reset, step_action, step_text, render, spec) and an optional ``id``
echoed in the response. Any bad line gets exactly one error response and the
session continues.
"""

from __future__ import annotations

import base64
import json
import socketserver
import sys
from typing import IO, Any

from ..env_core import Env, EnvUsageError
from ..gym_cards import TASKS, make_env
from ..prompting import PROMPT_VERSION, build_prompt, load_template, parse_action
from .render import render_pgm

COMMANDS = ("reset", "step_action", "step_text", "render", "spec")


class WireError(Exception):
    pass


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def _opt_bool(req: dict, key: str, default: bool) -> bool:
    val = req.get(key, default)
    if not isinstance(val, bool):
        raise WireError(f"{key} must be a boolean")
    return val


def _int(req: dict, key: str) -> int:
    val = req.get(key)
    if not isinstance(val, int) or isinstance(val, bool):
        raise WireError(f"{key} must be an integer")
    return val


class Session:
    def __init__(self) -> None:
        self.env: Env | None = None
        self.cot = True

    def _require_env(self) -> Env:
        if self.env is None:
            raise WireError("no active episode; send reset first")
        return self.env

    def _obs_payload(self, env: Env) -> dict:
        obs = env.observe()
        return {"observation": obs.to_json(), "prompt": build_prompt(obs, self.cot),
                "legal_actions": list(obs.legal_actions)}

    def _step(self, env: Env, action: str) -> dict:
        try:
            res = env.step(action)
        except EnvUsageError as exc:
            raise WireError(str(exc)) from exc
        out = self._obs_payload(env)
        out.update({"reward": res.reward, "done": res.done, "info": res.info})
        return out

    def dispatch(self, req: dict) -> dict:
        cmd = req.get("cmd")
        if cmd not in COMMANDS:
            raise WireError(f"unknown cmd {cmd!r}")
        if cmd == "reset":
            task = req.get("task")
            if task not in TASKS:
                raise WireError(f"unknown task {task!r}")
            seed = _int(req, "seed")
            kwargs: dict[str, Any] = {}
            if task == "numberline" and "n_max" in req:
                kwargs["n_max"] = _int(req, "n_max")
                if kwargs["n_max"] < 1:
                    raise WireError("n_max must be >= 1")
            if task in ("ezpoints", "points24"):
                kwargs["face_mode"] = _opt_bool(req, "face_mode", False)
            if task == "blackjack":
                kwargs["natural_bonus"] = _opt_bool(req, "natural_bonus", False)
            self.cot = _opt_bool(req, "cot", True)
            self.env = make_env(task, **kwargs)
            self.env.reset(seed)
            return self._obs_payload(self.env)
        if cmd == "step_action":
            env = self._require_env()
            action = req.get("action")
            if not isinstance(action, str):
                raise WireError("action must be a string")
            return self._step(env, action)
        if cmd == "step_text":
            env = self._require_env()
            text = req.get("text")
            if not isinstance(text, str):
                raise WireError("text must be a string")
            if env.done:
                raise WireError("episode finished")
            action, fallback = parse_action(text, env.legal_actions(), env.fallback_rng)
            out = self._step(env, action)
            out.update({"parsed_action": action, "fallback": fallback})
            return out
        if cmd == "render":
            env = self._require_env()
            obs = env.observe()
            out: dict[str, Any] = {"text": obs.text_render}
            if _opt_bool(req, "image", False):
                pgm = render_pgm(obs)
                out.update({"image_format": "pgm", "image_base64": base64.b64encode(pgm).decode("ascii")})
            return out
        # spec
        task = req.get("task")
        if task is None:
            env = self._require_env()
        else:
            if task not in TASKS:
                raise WireError(f"unknown task {task!r}")
            env = make_env(task)
        cot = _opt_bool(req, "cot", self.cot)
        return {"task": env.task_id, "action_space": list(env.action_space), "horizon": env.max_steps,
                "prompt_template": load_template(env.task_id, cot), "prompt_version": PROMPT_VERSION}

    def handle_line(self, line: str | bytes) -> str:
        """One request line in, one response line (without newline) out."""
        rid = None
        try:
            if isinstance(line, bytes):
                line = line.decode("utf-8")
            req = json.loads(line)
            if not isinstance(req, dict):
                raise WireError("request must be a JSON object")
            rid = req.get("id")
            if not isinstance(rid, (str, int, type(None))) or isinstance(rid, bool):
                rid = None
                raise WireError("id must be a string or integer")
            body = self.dispatch(req)
            resp = {"id": rid, "ok": True}
            resp.update(body)
        except (WireError, ValueError, UnicodeDecodeError, RecursionError) as exc:
            msg = str(exc) if isinstance(exc, WireError) else f"malformed request: {type(exc).__name__}"
            resp = {"id": rid, "ok": False, "error": msg}
        except Exception as exc:  # keep the session alive on anything unexpected
            resp = {"id": rid, "ok": False, "error": f"internal error: {type(exc).__name__}"}
        return dumps(resp)


def serve_stream(inp: IO[bytes], out: IO[bytes]) -> None:
    session = Session()
    for raw in inp:
        out.write(session.handle_line(raw.rstrip(b"\r\n")).encode("utf-8") + b"\n")
        out.flush()


def serve_stdio() -> None:
    serve_stream(sys.stdin.buffer, sys.stdout.buffer)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        serve_stream(self.rfile, self.wfile)


class WireTCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


def make_tcp_server(host: str = "127.0.0.1", port: int = 0) -> WireTCPServer:
    return WireTCPServer((host, port), _Handler)
