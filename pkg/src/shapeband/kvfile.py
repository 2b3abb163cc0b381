"""Self-describing key=value records with a SHA-256 checksum trailer."""

from __future__ import annotations

import hashlib


class IntegrityError(ValueError):
    pass


def _digest(body: str) -> str:
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


def dumps(kind: str, version: int, fields: dict[str, str]) -> str:
    lines = [f"format={kind}", f"version={version}"]
    for key, value in fields.items():
        if "\n" in str(value) or "=" in key:
            raise ValueError(f"field {key!r} cannot be serialized on one line")
        lines.append(f"{key}={value}")
    body = "\n".join(lines) + "\n"
    return body + f"checksum=sha256:{_digest(body)}\n"


def loads(text: str, kind: str, version: int) -> dict[str, str]:
    head, sep, tail = text.rpartition("checksum=sha256:")
    if not sep:
        raise IntegrityError("missing checksum line")
    if _digest(head) != tail.strip():
        raise IntegrityError("checksum mismatch: record was modified or truncated")
    fields: dict[str, str] = {}
    for line in head.splitlines():
        if not line or line.startswith("#"):
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise IntegrityError(f"malformed line {line!r}")
        fields[key] = value
    if fields.pop("format", None) != kind:
        raise IntegrityError(f"not a {kind} record")
    if fields.pop("version", None) != str(version):
        raise IntegrityError(f"unsupported {kind} version")
    return fields


def write(path, kind: str, version: int, fields: dict[str, str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(kind, version, fields))


def read(path, kind: str, version: int) -> dict[str, str]:
    with open(path, encoding="utf-8", newline="\n") as fh:
        return loads(fh.read(), kind, version)
