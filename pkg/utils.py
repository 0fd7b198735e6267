import hashlib
import os
import tempfile
from pathlib import Path
from typing import Iterable

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a hash of ``data``."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def canonical_config_text(items: dict[str, object]) -> str:
    """Render a flat config as key-sorted ``key=value`` lines.

    Lists are comma-joined, floats use their shortest round-trip repr and
    ``None`` renders as an empty value, so two configs that differ only in
    field order produce identical text.
    """
    lines = []
    for key in sorted(items):
        lines.append(f"{key}={_render_value(items[key])}")
    return "\n".join(lines) + "\n"


def _render_value(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_render_value(v) for v in value)
    return str(value)


def config_hash(items: dict[str, object]) -> str:
    """FNV-1a over the canonical config text, as 16 hex digits."""
    return f"{fnv1a_64(canonical_config_text(items).encode('utf-8')):016x}"


def parse_float_list(text: str | Iterable[float]) -> list[float]:
    """Parse ``"0, 0.05, 0.1"`` (or pass through an iterable) into floats."""
    if isinstance(text, str):
        parts = [p.strip() for p in text.replace(";", ",").split(",")]
        return [float(p) for p in parts if p]
    return [float(v) for v in text]


def atomic_write_text(path: str | Path, text: str) -> Path:
    """Write text so the final path either holds the old or the full new content.

    The data goes to a temp file in the same directory which is then renamed
    over ``path``; a killed run leaves at most a stray ``.tmp`` file.
    """
    return atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_bytes(path: str | Path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise
    return path


def sha256_file(path: str | Path) -> str:
    """SHA-256 of a file's bytes for manifest checksums."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
