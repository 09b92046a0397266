"""Joint multi-user decoding for power-domain NOMA with soft-output OSD and density evolution."""

__version__ = "0.1.0"

from .channel import Channel, transmit
from .gf2codes import LinearCode, encode, load_code
from .jointdec import JdConfig, jd_decode
from .osd import osd_decode
from .sosd import sosd_extrinsic, sosd_extrinsic_batch

__all__ = [
    "Channel",
    "JdConfig",
    "LinearCode",
    "encode",
    "jd_decode",
    "load_code",
    "osd_decode",
    "sosd_extrinsic",
    "sosd_extrinsic_batch",
    "transmit",
]
