"""Plugin protocol, host, and the built-in reference plugins."""

from .protocol import ACTION, PROTOCOL_VERSION, PluginError, PluginProgram, serve_plugin
from .host import (
    DEFAULT_CALL_TIMEOUT_MS,
    IllegalPluginState,
    InProcessTransport,
    PluginHandle,
    PluginManifest,
    PluginProtocolError,
    PluginRegistry,
    PluginRejectedConfig,
    PluginReportedError,
    PluginTimeout,
    SchemaViolation,
    SubprocessTransport,
    UnknownPlugin,
    discover_plugins,
)

__all__ = [
    "ACTION", "PROTOCOL_VERSION", "PluginError", "PluginProgram", "serve_plugin",
    "DEFAULT_CALL_TIMEOUT_MS", "IllegalPluginState", "InProcessTransport",
    "PluginHandle", "PluginManifest", "PluginProtocolError", "PluginRegistry",
    "PluginRejectedConfig", "PluginReportedError", "PluginTimeout",
    "SchemaViolation", "SubprocessTransport", "UnknownPlugin", "discover_plugins",
]
