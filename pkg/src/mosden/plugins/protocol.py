"""Wire protocol spoken between the host and out-of-process plugins.

One JSON object per line, UTF-8, ``\n`` terminated, one outstanding request
at a time. The plugin prints a handshake line first:

    {"protocol":"mosden-plugin/1","plugin_id":"...","version":"..."}

then answers requests of the form

    {"op":"set_configuration","config":{...}}
    {"op":"get_data_structure"}
    {"op":"get_readings"}

with ``{"ok":true,"result":...}`` or ``{"ok":false,"error":"..."}``. A
``get_readings`` result of null means "no new data right now". Plugin
authors in any language only need line-buffered stdio and a JSON codec;
``serve_plugin`` is the reference loop for Python plugins.
"""

from __future__ import annotations

import json
import sys
from typing import Any, Mapping, TextIO

from ..model import canonical_json_bytes

__all__ = ["PROTOCOL_VERSION", "ACTION", "OPS", "PluginError", "PluginProgram",
           "handshake_line", "serve_plugin"]

PROTOCOL_VERSION = "mosden-plugin/1"

# The discovery filter: manifests carrying any other action string are not
# plugins for this host and are skipped.
ACTION = "mosden.plugin.pick_plugin/1"

OPS = ("set_configuration", "get_data_structure", "get_readings")


class PluginError(Exception):
    """Raised by plugin logic; crosses the wire as {"ok":false,"error":...}."""


class PluginProgram:
    """The three-call contract a plugin implements, transport-agnostic.

    The same object can sit behind an in-process transport or be wrapped by
    serve_plugin in a subprocess; behavior must not depend on which.
    """

    plugin_id: str = ""
    version: str = "0.0.0"

    def set_configuration(self, config: Mapping[str, str]) -> None:
        """Accept or reject (PluginError) the per-sensor config map."""
        raise NotImplementedError

    def get_data_structure(self) -> list[dict[str, Any]]:
        """Schema as a list of {"name","value_type","unit"} objects."""
        raise NotImplementedError

    def get_readings(self) -> dict[str, Any] | None:
        """One {"timestamp","values"} element, or None for no new data."""
        raise NotImplementedError


def handshake_line(program: PluginProgram) -> bytes:
    return canonical_json_bytes({
        "protocol": PROTOCOL_VERSION,
        "plugin_id": program.plugin_id,
        "version": program.version,
    })


def _write_line(out: TextIO, obj: Any) -> None:
    out.write(canonical_json_bytes(obj).decode("utf-8"))
    out.write("\n")
    out.flush()


def serve_plugin(program: PluginProgram, stdin: TextIO | None = None,
                 stdout: TextIO | None = None) -> None:
    """Blocking request loop: handshake, then answer until stdin closes.

    Never lets a plugin bug kill the process mid-protocol: logic errors
    become {"ok":false} replies, and only EOF or a broken pipe ends the loop.
    """
    fin = stdin if stdin is not None else sys.stdin
    fout = stdout if stdout is not None else sys.stdout
    try:
        fout.write(handshake_line(program).decode("utf-8") + "\n")
        fout.flush()
        for line in fin:
            line = line.strip()
            if not line:
                continue
            try:
                reply = _dispatch(program, json.loads(line))
            except PluginError as exc:
                reply = {"ok": False, "error": str(exc)}
            except Exception as exc:  # plugin bug; keep the loop alive
                reply = {"ok": False, "error": f"internal: {exc}"}
            _write_line(fout, reply)
    except (BrokenPipeError, KeyboardInterrupt):
        pass


def _dispatch(program: PluginProgram, request: Any) -> dict[str, Any]:
    if not isinstance(request, dict) or "op" not in request:
        return {"ok": False, "error": "bad_request: expected {\"op\":...}"}
    op = request["op"]
    if op == "set_configuration":
        config = request.get("config")
        if not isinstance(config, dict):
            return {"ok": False, "error": "bad_request: config must be an object"}
        program.set_configuration(config)
        return {"ok": True, "result": None}
    if op == "get_data_structure":
        return {"ok": True, "result": program.get_data_structure()}
    if op == "get_readings":
        return {"ok": True, "result": program.get_readings()}
    return {"ok": False, "error": f"unknown_op: {op}"}
