from fwtriage.ingest.archive import ExpansionReport, SkippedMember, expand_archive, iter_files
from fwtriage.ingest.buildprop import (
    BuildProps,
    SecurityFlagsReport,
    classify_build_tags,
    detect_version,
    device_identity,
    parse_build_props,
    security_flags,
)
from fwtriage.ingest.firmware import (
    AppRecord,
    FirmwareRecord,
    InventoryEntry,
    enumerate_apks,
    file_md5,
    find_build_props,
    import_firmware,
    locate_system_image,
    partition_hint,
    read_image,
)
from fwtriage.ingest.sparse import decode_sparse, is_sparse

__all__ = [
    "AppRecord", "BuildProps", "ExpansionReport", "FirmwareRecord", "InventoryEntry",
    "SecurityFlagsReport", "SkippedMember", "classify_build_tags", "decode_sparse",
    "detect_version", "device_identity", "enumerate_apks", "expand_archive", "file_md5",
    "find_build_props", "import_firmware", "is_sparse", "iter_files", "locate_system_image",
    "parse_build_props", "partition_hint", "read_image", "security_flags",
]
