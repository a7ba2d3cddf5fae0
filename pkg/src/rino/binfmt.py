"""Versioned named-array container shared by the operator cache, map dumps
and parameter checkpoints.

Layout (all little-endian)::

    magic      4 bytes
    version    uint32
    hash       32 bytes
    count      uint32
    count x record:
        name_len uint32, name utf-8, ndim uint32, shape uint64 * ndim,
        data float64 * prod(shape)
    crc32      uint32 over every preceding byte

Complex arrays are stored as ``<name>.re`` / ``<name>.im``; integer arrays
are stored as float64 (exact below 2**53).
"""
import struct
import zlib

import numpy as np

HASH_BYTES = 32


class ContainerError(ValueError):
    pass


class ChecksumError(ContainerError):
    pass


class VersionMismatch(ContainerError):
    pass


def pack(magic, version, content_hash, arrays):
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    content_hash = bytes(content_hash)
    if len(content_hash) != HASH_BYTES:
        raise ValueError(f"hash must be {HASH_BYTES} bytes")
    flat = {}
    for name, a in arrays.items():
        a = np.asarray(a)
        if np.iscomplexobj(a):
            flat[name + ".re"] = a.real
            flat[name + ".im"] = a.imag
        else:
            flat[name] = a
    parts = [magic, struct.pack("<I", version), content_hash, struct.pack("<I", len(flat))]
    for name, a in flat.items():
        nb = name.encode("utf-8")
        a = np.array(a, dtype="<f8", order="C")
        parts.append(struct.pack("<I", len(nb)) + nb + struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        parts.append(a.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def unpack(data, magic, version=None):
    """Return (version, hash, arrays). Complex pairs are re-joined."""
    data = bytes(data)
    head = 4 + 4 + HASH_BYTES + 4
    if len(data) < head + 4:
        raise ChecksumError(f"container truncated ({len(data)} bytes)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ChecksumError("CRC32 mismatch: file is corrupted or truncated")
    if data[:4] != magic:
        raise ContainerError(f"bad magic {data[:4]!r}, expected {magic!r}")
    (ver,) = struct.unpack_from("<I", data, 4)
    if version is not None and ver != version:
        raise VersionMismatch(f"format version {ver}, expected {version}")
    h = data[8:8 + HASH_BYTES]
    (count,) = struct.unpack_from("<I", data, 8 + HASH_BYTES)
    pos = head
    flat = {}
    try:
        for _ in range(count):
            (nl,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + nl].decode("utf-8")
            pos += nl
            (ndim,) = struct.unpack_from("<I", body, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", body, pos)
            pos += 8 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * size > len(body):
                raise ChecksumError(f"record {name!r} runs past the end of the file")
            flat[name] = np.frombuffer(body, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * size
    except struct.error as exc:
        raise ChecksumError(f"malformed record table: {exc}") from None
    arrays = {}
    for name, a in flat.items():
        if name.endswith(".re") and name[:-3] + ".im" in flat:
            arrays[name[:-3]] = a + 1j * flat[name[:-3] + ".im"]
        elif name.endswith(".im") and name[:-3] + ".re" in flat:
            continue
        else:
            arrays[name] = a
    return ver, h, arrays


def write(path, magic, version, content_hash, arrays):
    data = pack(magic, version, content_hash, arrays)
    with open(path, "wb") as fh:
        fh.write(data)
    return data


def read(path, magic, version=None):
    with open(path, "rb") as fh:
        return unpack(fh.read(), magic, version)
