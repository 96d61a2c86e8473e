"""Parsing of Android ``build.prop`` / ``default.prop`` files."""
from __future__ import annotations

from dataclasses import dataclass, field

VERSION_KEYS = ("ro.build.version.release", "ro.system.build.version.release")
BUILD_TAG_CLASSES = ("release-keys", "test-keys", "dev-keys")
SECURITY_KEYS = {
    "ro_secure": "ro.secure",
    "ro_adb_secure": "ro.adb.secure",
    "ro_debuggable": "ro.debuggable",
    "ro_oem_unlock_supported": "ro.oem_unlock_supported",
}


@dataclass
class BuildProps:
    pairs: dict[str, str] = field(default_factory=dict)
    imports: list[str] = field(default_factory=list)
    comments: int = 0
    warnings: list[str] = field(default_factory=list)

    def get(self, key: str, default=None):
        return self.pairs.get(key, default)

    def to_dict(self) -> dict:
        return {"pairs": self.pairs, "imports": self.imports,
                "comments": self.comments, "warnings": self.warnings}

    @classmethod
    def from_dict(cls, data) -> "BuildProps":
        return cls(dict(data.get("pairs", {})), list(data.get("imports", [])),
                   int(data.get("comments", 0)), list(data.get("warnings", [])))


def parse_build_props(text) -> BuildProps:
    """Parse property-file text (bytes are decoded leniently).

    Never raises: unparseable lines and overridden keys end up in
    ``warnings``. ``import`` lines are kept verbatim and not followed.
    """
    if isinstance(text, (bytes, bytearray, memoryview)):
        text = bytes(text).decode("utf-8", errors="replace")
    props = BuildProps()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            props.comments += 1
            continue
        if line.startswith("import ") or line == "import":
            props.imports.append(raw.rstrip("\r\n"))
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            props.warnings.append(f"line {lineno}: not a key=value pair")
            continue
        if key in props.pairs:
            props.warnings.append(f"line {lineno}: duplicate key {key} overrides earlier value")
            del props.pairs[key]  # keep insertion order of the winning line
        props.pairs[key] = value.strip()
    return props


def detect_version(props: BuildProps) -> str | None:
    for key in VERSION_KEYS:
        value = (props.pairs.get(key) or "").strip()
        if value:
            return value
    return None


def _first(props: BuildProps, *keys: str) -> str | None:
    for k in keys:
        v = (props.pairs.get(k) or "").strip()
        if v:
            return v
    return None


def device_identity(props: BuildProps) -> dict[str, str | None]:
    return {
        "brand": _first(props, "ro.product.brand", "ro.product.system.brand", "ro.product.vendor.brand"),
        "manufacturer": _first(props, "ro.product.manufacturer", "ro.product.system.manufacturer",
                               "ro.product.vendor.manufacturer"),
        "model": _first(props, "ro.product.model", "ro.product.system.model", "ro.product.vendor.model"),
    }


@dataclass(frozen=True)
class SecurityFlagsReport:
    ro_secure: int | None
    ro_adb_secure: int | None
    ro_debuggable: int | None
    ro_oem_unlock_supported: int | None
    build_tags_class: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _flag(value: str | None) -> int | None:
    if value is None:
        return None
    value = value.strip()
    return int(value) if value in ("0", "1") else None


def classify_build_tags(value: str | None) -> str:
    if value is None:
        return "absent"
    value = value.strip()
    return value if value in BUILD_TAG_CLASSES else "other"


def security_flags(props: BuildProps) -> SecurityFlagsReport:
    flags = {name: _flag(props.pairs.get(key)) for name, key in SECURITY_KEYS.items()}
    return SecurityFlagsReport(build_tags_class=classify_build_tags(props.pairs.get("ro.build.tags")), **flags)
