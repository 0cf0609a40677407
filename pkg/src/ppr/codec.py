"""Elias delta codes for positive integers and a small byte container.

Bit strings are plain ``str`` objects over ``'0'``/``'1'``, so their length
is exact and no padding question arises until a stream is packed.

Container layout::

    b"PPR1" | code id (1 byte, 0 = Elias delta) | count (8 bytes, little endian)
    | payload, MSB first, zero-padded to a byte | padding length (1 byte)
"""

from __future__ import annotations

MAGIC = b"PPR1"
CODE_ELIAS_DELTA = 0
MAX_VALUE = (1 << 63) - 1


class CodecError(ValueError):
    pass


def elias_delta_length(k: int) -> int:
    n = k.bit_length() - 1
    return n + 2 * ((n + 1).bit_length() - 1) + 1


def elias_delta_encode(k: int) -> str:
    """Codeword for ``1 <= k < 2**63``."""
    if isinstance(k, bool) or not isinstance(k, int):
        k = int(k)
    if k < 1:
        raise CodecError(f"Elias delta needs k >= 1, got {k}")
    if k > MAX_VALUE:
        raise CodecError(f"k must be below 2**63, got {k}")
    n = k.bit_length()  # floor(log2 k) + 1
    prefix = bin(n)[2:]
    return "0" * (len(prefix) - 1) + prefix + bin(k)[3:]


def elias_delta_decode(bits: str, pos: int = 0) -> tuple[int, int]:
    """Decode one codeword starting at ``pos``; returns ``(k, bits consumed)``."""
    i = pos
    end = len(bits)
    zeros = 0
    while i < end and bits[i] == "0":
        zeros += 1
        i += 1
    if i + zeros + 1 > end:
        raise CodecError(f"truncated codeword at bit {pos}")
    n = int(bits[i:i + zeros + 1], 2)
    i += zeros + 1
    if n > 63:
        raise CodecError(f"codeword at bit {pos} encodes a value of {n} bits")
    if i + n - 1 > end:
        raise CodecError(f"truncated codeword at bit {pos}")
    k = int("1" + bits[i:i + n - 1], 2)
    i += n - 1
    return k, i - pos


def encode_many(values) -> str:
    return "".join(elias_delta_encode(int(v)) for v in values)


def decode_many(bits: str, count: int | None = None) -> list[int]:
    """Decode ``count`` codewords (or all of ``bits`` when ``count`` is None)."""
    out = []
    pos = 0
    while (count is None and pos < len(bits)) or (count is not None and len(out) < count):
        k, used = elias_delta_decode(bits, pos)
        out.append(k)
        pos += used
    if count is not None and pos != len(bits):
        raise CodecError(f"{len(bits) - pos} unexpected trailing bits")
    return out


def pack_container(values, code_id: int = CODE_ELIAS_DELTA) -> bytes:
    if code_id != CODE_ELIAS_DELTA:
        raise CodecError(f"unsupported code id {code_id}")
    values = list(values)
    bits = encode_many(values)
    pad = (-len(bits)) % 8
    bits += "0" * pad
    payload = int(bits, 2).to_bytes(len(bits) // 8, "big") if bits else b""
    return MAGIC + bytes([code_id]) + len(values).to_bytes(8, "little") + payload + bytes([pad])


def unpack_container(data: bytes) -> list[int]:
    if len(data) < 14:
        raise CodecError("container too short")
    if data[:4] != MAGIC:
        raise CodecError("bad magic, expected PPR1")
    if data[4] != CODE_ELIAS_DELTA:
        raise CodecError(f"unsupported code id {data[4]}")
    count = int.from_bytes(data[5:13], "little")
    payload = data[13:-1]
    pad = data[-1]
    if pad > 7 or (pad and not payload):
        raise CodecError(f"invalid padding length {pad}")
    bits = "".join(f"{b:08b}" for b in payload)
    if pad:
        if bits[-pad:] != "0" * pad:
            raise CodecError("nonzero padding bits")
        bits = bits[:-pad]
    return decode_many(bits, count)
