from .bitpack import PayloadError, pack_fixed, unpack_fixed
from .packets import Delivery, MessageLost, Packet, packetize, reassemble
from .rangecoder import DecodeError, entropy_decode, entropy_encode
from .wire import EncodedMessage, WireError, read_vector, write_vector

__all__ = [
    "DecodeError",
    "Delivery",
    "EncodedMessage",
    "MessageLost",
    "Packet",
    "PayloadError",
    "WireError",
    "entropy_decode",
    "entropy_encode",
    "pack_fixed",
    "packetize",
    "read_vector",
    "reassemble",
    "unpack_fixed",
    "write_vector",
]
