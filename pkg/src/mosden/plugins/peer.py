"""Built-in plugin that treats another node as the sensor.

Peer streaming reuses the wrapper -> plugin dataflow unchanged: the local
node samples this plugin like any other, and the plugin answers by pulling
``mode=latest`` from the remote node's HTTP API. Remote timestamps are
preserved untouched, so values survive any number of hops bit-identically;
an element already seen (same timestamp) is reported as "no new data"
rather than re-emitted.
"""

from __future__ import annotations

from typing import Any, Mapping
from urllib.error import URLError

from ..httpd import http_json
from ..model import MosdenError
from .host import PluginManifest
from .protocol import ACTION, PluginError, PluginProgram

__all__ = ["PeerPlugin", "PEER_PLUGIN_ID", "register_builtin",
           "RemoteUnreachable", "RemoteUnknownVS"]

PEER_PLUGIN_ID = "mosden.peer"
PEER_VERSION = "1.0.0"


class RemoteUnreachable(MosdenError):
    """TCP/HTTP transport failure talking to the remote node."""


class RemoteUnknownVS(MosdenError):
    """The remote node has no virtual sensor by that name."""


class PeerPlugin(PluginProgram):
    plugin_id = PEER_PLUGIN_ID
    version = PEER_VERSION

    def __init__(self, **_: Any):
        self._remote_url = ""
        self._remote_vs = ""
        self._timeout_s = 5.0
        self._last_ts: int | None = None

    def set_configuration(self, config: Mapping[str, str]) -> None:
        for key in ("remote_url", "remote_vs"):
            if not config.get(key):
                raise PluginError(f"missing required config key: {key}")
        self._remote_url = config["remote_url"].rstrip("/")
        self._remote_vs = config["remote_vs"]
        try:
            self._timeout_s = float(config.get("http_timeout_ms", "5000")) / 1000.0
        except ValueError:
            raise PluginError("http_timeout_ms must be a number") from None
        self._last_ts = None

    def get_data_structure(self) -> list[dict[str, Any]]:
        """The remote sensor's schema, straight from its descriptor."""
        if not self._remote_url:
            raise PluginError("not configured")
        try:
            status, body = http_json(
                "GET", f"{self._remote_url}/sensors", timeout_s=self._timeout_s)
        except (URLError, OSError) as exc:
            raise PluginError(f"RemoteUnreachable: {exc}") from None
        if status != 200 or not isinstance(body, list):
            raise PluginError(f"RemoteUnreachable: /sensors answered {status}")
        for descriptor in body:
            if descriptor.get("vs_name") == self._remote_vs:
                return descriptor.get("schema", [])
        raise PluginError(f"RemoteUnknownVS: {self._remote_vs}")

    def get_readings(self) -> dict[str, Any] | None:
        url = (f"{self._remote_url}/sensors/{self._remote_vs}/data?mode=latest")
        try:
            status, body = http_json("GET", url, timeout_s=self._timeout_s)
        except (URLError, OSError) as exc:
            raise PluginError(f"RemoteUnreachable: {exc}") from None
        if status == 404:
            # no_data (empty store) and unknown VS both mean nothing to emit
            if isinstance(body, dict) and body.get("error") == "no_data":
                return None
            raise PluginError(f"RemoteUnknownVS: {self._remote_vs}")
        if status != 200 or not isinstance(body, dict):
            raise PluginError(f"RemoteUnreachable: data pull answered {status}")
        ts = body.get("timestamp")
        if ts == self._last_ts:
            return None
        self._last_ts = ts
        return body


def peer_manifest() -> PluginManifest:
    return PluginManifest(plugin_id=PEER_PLUGIN_ID, version=PEER_VERSION,
                          action=ACTION, size_bytes=0,
                          categories=("peer", "builtin"))


def register_builtin(registry) -> PluginManifest:
    manifest = peer_manifest()
    registry.register_builtin(manifest, PeerPlugin)
    return manifest
