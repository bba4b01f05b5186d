"""Stdio entry point: run the reference plugin as a subprocess.

Launched by a manifest command such as
["python3", "-m", "mosden.plugins.sim_main"]; an optional argv[1]
overrides the advertised plugin_id so one executable can back several
manifests.
"""

from __future__ import annotations

import sys

from .protocol import serve_plugin
from .sim import SimPlugin


def main() -> None:
    plugin_id = sys.argv[1] if len(sys.argv) > 1 else None
    serve_plugin(SimPlugin(plugin_id=plugin_id))


if __name__ == "__main__":
    main()
