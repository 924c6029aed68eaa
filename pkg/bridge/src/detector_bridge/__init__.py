"""Reference external-process scorer speaking the stdio wire protocol.

The bridge answers `train` / `rescore` JSON messages on stdin/stdout, either
from a recorded replay script (no ML dependency) or by delegating to a
user-supplied detector adapter.
"""

from .session import BridgeSession, load_dump, load_script

__all__ = ["BridgeSession", "load_dump", "load_script"]
__version__ = "0.1.0"
