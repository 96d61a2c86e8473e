"""Test-side fixture builders, independent of the package under test."""
from __future__ import annotations

import io
import struct
import tarfile
import zipfile
import zlib

import numpy as np

from fwtriage import datasets

MAGIC = 0xED26FF3A
RAW, FILL, DONT_CARE, CRC = 0xCAC1, 0xCAC2, 0xCAC3, 0xCAC4

LISTING_BUILD_PROP = """\
# PRODUCT_OEM_PROPERTIES\\part{title}
import /oem/oem.prop ro.config.ringtone
import /oem/oem.prop ro.config.notification_sound
import /oem/oem.prop ro.config.alarm_alert
import /oem/oem.prop ro.config.wallpaper
import /oem/oem.prop ro.config.wallpaper_component
import /oem/oem.prop ro.oem.*
import /oem/oem.prop oem.*
# begin build properties
# autogenerated by buildinfo.sh
ro.build.id=MDA89D
ro.build.display.id=MDA89D
ro.build.version.incremental=2294819
ro.build.version.sdk=23
ro.build.version.preview_sdk=0
ro.build.version.codename=REL
ro.build.version.all_codenames=REL
ro.build.version.release=6.0
ro.build.version.security_patch=2015-10-01
ro.build.date=Wed Sep 30 00:50:26 UTC 2015
ro.build.date.utc=1443574226
ro.build.type=user
ro.build.user=android-build
ro.build.host=wpix10.hot.corp.google.com
ro.build.tags=release-keys
ro.build.flavor=angler-user
ro.product.model=Nexus 6P
ro.product.brand=google
ro.product.name=angler
ro.product.device=angler
ro.product.board=angler
# ro.product.cpu.abi and ro.product.cpu.abi2 are obsolete,
# use ro.product.cpu.abilist instead.
ro.product.cpu.abi=arm64-v8a
ro.product.cpu.abilist=arm64-v8a,armeabi-v7a,armeabi
ro.product.cpu.abilist32=armeabi-v7a,armeabi
ro.product.cpu.abilist64=arm64-v8a
ro.product.manufacturer=Huawei
ro.product.locale=en-US
ro.board.platform=msm8994
# ro.build.product is obsolete; use ro.product.device
ro.build.product=angler
# Do not try to parse description, fingerprint, or thumbprint
ro.build.description=angler-user 6.0 MDA89D 2294819 release-keys
ro.build.fingerprint=google/angler/angler:6.0/MDA89D/2294819:user/release-keys
ro.build.characteristics=nosdcard
"""


def sparse_encode(payload: bytes, block_size: int = 4096, skip_zero: bool = True,
                  with_crc: bool = True) -> bytes:
    """Encode like img2simg: uniform blocks become FILL, zero blocks optionally
    DONT_CARE, everything else RAW runs; a trailing CRC chunk covers the image."""
    if len(payload) % block_size:
        payload = payload + b"\0" * (block_size - len(payload) % block_size)
    n = len(payload) // block_size
    chunks = []

    def kind(k):
        blk = payload[k * block_size:(k + 1) * block_size]
        word = blk[:4]
        if word * (block_size // 4) == blk:
            if skip_zero and word == b"\0\0\0\0":
                return ("skip", None)
            return ("fill", word)
        return ("raw", None)

    k = 0
    while k < n:
        t, word = kind(k)
        j = k + 1
        while j < n and kind(j) == (t, word):
            j += 1
        count = j - k
        if t == "raw":
            body = payload[k * block_size:j * block_size]
            chunks.append(struct.pack("<HHII", RAW, 0, count, 12 + len(body)) + body)
        elif t == "fill":
            chunks.append(struct.pack("<HHII", FILL, 0, count, 16) + word)
        else:
            chunks.append(struct.pack("<HHII", DONT_CARE, 0, count, 12))
        k = j
    if with_crc:
        chunks.append(struct.pack("<HHII", CRC, 0, 0, 16) + struct.pack("<I", zlib.crc32(payload)))
    header = struct.pack("<IHHHHIIII", MAGIC, 1, 0, 28, 12, block_size, n, len(chunks), 0)
    return header + b"".join(chunks)


def random_image(rng: np.random.Generator, size: int, block_size: int = 4096) -> bytes:
    """Random bytes interleaved with zero and uniform runs, so every chunk kind appears."""
    out = bytearray(rng.integers(0, 256, size=size, dtype=np.uint8).tobytes())
    blocks = size // block_size
    for _ in range(max(1, blocks // 8)):
        a = int(rng.integers(0, blocks))
        b = min(blocks, a + int(rng.integers(1, 8)))
        fill = bytes([0, 0, 0, 0]) if rng.random() < 0.5 else rng.integers(0, 256, 4, dtype=np.uint8).tobytes()
        out[a * block_size:b * block_size] = fill * ((b - a) * block_size // 4)
    return bytes(out)


def tar_bytes(files: dict[str, bytes]) -> bytes:
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w") as tf:
        for name, data in files.items():
            info = tarfile.TarInfo(name)
            info.size = len(data)
            tf.addfile(info, io.BytesIO(data))
    return buf.getvalue()


def zip_bytes(files: dict[str, bytes], encrypted: set[str] = frozenset()) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
        for name, data in files.items():
            zf.writestr(name, data)
    raw = bytearray(buf.getvalue())
    # mark members as encrypted by flipping general-purpose bit 0 in both headers
    for name in encrypted:
        enc = name.encode()
        for sig, flag_off, name_off in ((b"PK\x03\x04", 6, 30), (b"PK\x01\x02", 8, 46)):
            pos = 0
            while (pos := raw.find(sig, pos)) >= 0:
                nlen = struct.unpack_from("<H", raw, pos + (26 if sig == b"PK\x03\x04" else 28))[0]
                if raw[pos + name_off:pos + name_off + nlen] == enc:
                    flags = struct.unpack_from("<H", raw, pos + flag_off)[0] | 1
                    struct.pack_into("<H", raw, pos + flag_off, flags)
                pos += 4
    return bytes(raw)


def fake_apk(seed: int, size: int = 3000) -> bytes:
    rng = np.random.default_rng(seed)
    return zip_bytes({
        "AndroidManifest.xml": b"<manifest package='com.example.app%d'/>" % seed,
        "classes.dex": rng.integers(0, 256, size=size, dtype=np.uint8).tobytes(),
    })


def fixture_firmware(build_prop: str = LISTING_BUILD_PROP, sparse: bool = True,
                     image_name: str = "system.img") -> bytes:
    """Zip holding a (sparse) system image whose raw form is a tar with
    build.prop and two APKs in app/ and priv-app/."""
    system = tar_bytes({
        "system/build.prop": build_prop.encode(),
        "system/app/Calculator/Calculator.apk": fake_apk(1),
        "system/priv-app/Settings/Settings.apk": fake_apk(2),
        "system/lib/libfoo.so": np.random.default_rng(3).integers(0, 256, 5000, dtype=np.uint8).tobytes(),
    })
    image = sparse_encode(system) if sparse else system
    return zip_bytes({
        f"IMAGES/{image_name}": image,
        "IMAGES/boot.img": np.random.default_rng(4).integers(0, 256, 2048, dtype=np.uint8).tobytes(),
        "META/misc_info.txt": b"recovery_api_version=3\n",
    })


def tlsh_fixture_files() -> list[bytes]:
    """Random, text, low-alphabet and correlated inputs around the size boundaries."""
    rng = np.random.default_rng(2024)
    files = []
    for size in (50, 51, 64, 100, 255, 256, 257, 1000, 4096, 65536, 1 << 20):
        files.append(rng.integers(0, 256, size, dtype=np.uint8).tobytes())
    text = b"The quick brown fox jumps over the lazy dog. " * 400
    for cut in (60, 300, 2000, len(text)):
        files.append(text[:cut])
    for k in range(10):
        files.append(bytes(rng.integers(0, 8, 500 + 97 * k, dtype=np.uint8) + 65))
    corr, _ = datasets.make_correlated_files(40, mean_family_size=5, random_state=7, size_range=(80, 30000))
    files.extend(corr)
    return files
