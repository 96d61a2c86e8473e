"""Firmware triage: ingest Android firmware, fingerprint files, cluster similar binaries."""

__version__ = "0.1.0"
