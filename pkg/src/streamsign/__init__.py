"""streamsign: blocking and non-blocking signing of XOP-packaged messages.

The streaming (non-blocking) mode digests payload parts while they stream to
the wire and defers the signature to the final MIME part, so transmission
and signature computation overlap; the blocking reference mode reconstitutes
the inline-base64 infoset and signs before the first byte leaves.
"""

from . import bench, mime, transport, wssec, xmlcore, xop
from .config import default_chunk_size
from .errors import SinkError, SourceError, StreamSignError
from .sources import bytes_source, file_source, prng_source, single_pass

__version__ = "0.1.0"

__all__ = [
    "StreamSignError",
    "SinkError",
    "SourceError",
    "bench",
    "bytes_source",
    "default_chunk_size",
    "file_source",
    "mime",
    "prng_source",
    "single_pass",
    "transport",
    "wssec",
    "xmlcore",
    "xop",
]
