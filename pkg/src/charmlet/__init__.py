"""charmlet: a miniature message-driven parallel runtime.

Chares exchange regular entry-method messages, device-payload messages
whose metadata and payload travel as independently tagged frames, and
streamed channels that derive tags instead of sending envelopes. An
MPI-like facade, OSU-style microbenchmarks, and a Jacobi3D proxy app
sit on top. Device memory is simulated, and a virtual time mode makes
latency and bandwidth measurements exact consequences of the configured
link and copy cost models, so everything runs on a laptop.
"""

from .channels import Channel, ChannelError
from .completion import (
    OK,
    TRANSPORT_ERROR,
    TRUNCATED,
    Callback,
    ChareId,
    Completion,
    CountingFuture,
    Future,
)
from .config import (
    VIRTUAL,
    WALL,
    CopyCostModel,
    LinkModel,
    RuntimeConfig,
    load_config,
)
from .mpi import ANY_TAG, MpiError, Status, mpi_run, rank_result
from .runtime import Chare, DeviceArg, Runtime, RuntimeAbort, entry

__version__ = "0.1.0"

__all__ = [
    "ANY_TAG",
    "Callback",
    "Channel",
    "ChannelError",
    "Chare",
    "ChareId",
    "Completion",
    "CopyCostModel",
    "CountingFuture",
    "DeviceArg",
    "Future",
    "LinkModel",
    "MpiError",
    "OK",
    "Runtime",
    "RuntimeAbort",
    "RuntimeConfig",
    "Status",
    "TRANSPORT_ERROR",
    "TRUNCATED",
    "VIRTUAL",
    "WALL",
    "entry",
    "load_config",
    "mpi_run",
    "rank_result",
    "__version__",
]
