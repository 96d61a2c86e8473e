"""Decoder for the Android sparse image container."""
from __future__ import annotations

import os
import struct
import zlib

from fwtriage.exceptions import CorruptChunkHeader, CrcMismatch, NotSparse

SPARSE_MAGIC = 0xED26FF3A
CHUNK_RAW = 0xCAC1
CHUNK_FILL = 0xCAC2
CHUNK_DONT_CARE = 0xCAC3
CHUNK_CRC32 = 0xCAC4

FILE_HEADER = struct.Struct("<IHHHHIIII")
CHUNK_HEADER = struct.Struct("<HHII")
_COPY = 1 << 20


def is_sparse(path) -> bool:
    try:
        with open(path, "rb") as fh:
            head = fh.read(4)
    except OSError:
        return False
    return len(head) == 4 and struct.unpack("<I", head)[0] == SPARSE_MAGIC


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CorruptChunkHeader(f"truncated {what}: wanted {n} bytes, got {len(data)}")
    return data


def decode_sparse(path, out_path) -> int:
    """Expand a sparse image at ``path`` into a raw image at ``out_path``.

    CRC chunks are checked against the CRC-32 of everything written so
    far, skipped regions counting as zeros. Returns the output length,
    which always equals ``total_blocks * block_size``.
    """
    with open(path, "rb") as src:
        head = src.read(FILE_HEADER.size)
        if len(head) < 4 or struct.unpack("<I", head[:4])[0] != SPARSE_MAGIC:
            raise NotSparse(f"{path} does not start with the sparse magic")
        if len(head) < FILE_HEADER.size:
            raise CorruptChunkHeader("truncated file header")
        (_, major, _minor, file_hdr_sz, chunk_hdr_sz,
         blk_sz, total_blks, total_chunks, _checksum) = FILE_HEADER.unpack(head)
        if major != 1:
            raise CorruptChunkHeader(f"unsupported major version {major}")
        if file_hdr_sz < FILE_HEADER.size or chunk_hdr_sz < CHUNK_HEADER.size:
            raise CorruptChunkHeader("header sizes smaller than the format minimum")
        if blk_sz == 0 or blk_sz % 4:
            raise CorruptChunkHeader(f"invalid block size {blk_sz}")
        _read_exact(src, file_hdr_sz - FILE_HEADER.size, "file header padding")

        crc = 0
        blocks = 0
        with open(out_path, "wb") as dst:
            for k in range(total_chunks):
                ctype, _, chunk_sz, total_sz = CHUNK_HEADER.unpack(
                    _read_exact(src, CHUNK_HEADER.size, f"chunk {k} header"))
                _read_exact(src, chunk_hdr_sz - CHUNK_HEADER.size, f"chunk {k} header padding")
                body = total_sz - chunk_hdr_sz
                nbytes = chunk_sz * blk_sz
                if ctype == CHUNK_RAW:
                    if body != nbytes:
                        raise CorruptChunkHeader(f"chunk {k}: raw size {body} != {nbytes}")
                    left = nbytes
                    while left:
                        piece = _read_exact(src, min(left, _COPY), f"chunk {k} data")
                        dst.write(piece)
                        crc = zlib.crc32(piece, crc)
                        left -= len(piece)
                elif ctype in (CHUNK_FILL, CHUNK_DONT_CARE):
                    if ctype == CHUNK_FILL:
                        if body != 4:
                            raise CorruptChunkHeader(f"chunk {k}: fill body of {body} bytes")
                        pattern = _read_exact(src, 4, f"chunk {k} fill pattern")
                    else:
                        if body != 0:
                            raise CorruptChunkHeader(f"chunk {k}: don't-care chunk with body")
                        pattern = b"\0\0\0\0"
                    block = pattern * (_COPY // 4)
                    left = nbytes
                    while left:
                        piece = block[:min(left, _COPY)]
                        dst.write(piece)
                        crc = zlib.crc32(piece, crc)
                        left -= len(piece)
                elif ctype == CHUNK_CRC32:
                    if body != 4:
                        raise CorruptChunkHeader(f"chunk {k}: crc body of {body} bytes")
                    expected = struct.unpack("<I", _read_exact(src, 4, f"chunk {k} crc"))[0]
                    if expected != crc:
                        raise CrcMismatch(f"chunk {k}: crc {expected:08x} != computed {crc:08x}")
                    continue
                else:
                    raise CorruptChunkHeader(f"chunk {k}: unknown type 0x{ctype:04X}")
                blocks += chunk_sz
                if blocks > total_blks:
                    raise CorruptChunkHeader(f"chunks exceed the declared {total_blks} blocks")
            if blocks != total_blks:
                raise CorruptChunkHeader(f"chunks cover {blocks} of {total_blks} blocks")
            size = dst.tell()
    return size


def decode_sparse_file(path, out_path=None) -> str:
    """Decode next to the input (``<name>.raw``) unless ``out_path`` is given."""
    out = out_path or f"{os.fspath(path)}.raw"
    decode_sparse(path, out)
    return os.fspath(out)
