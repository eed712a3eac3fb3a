"""Label -> color table implementing the segmentation color protocol.

Semantic maps are rendered with these colors, and the conditioning stack
identifies object categories purely through them, so the table must be
injective and lookups deterministic. Unknown labels get a hash-derived
fallback color that is guaranteed to differ from every committed entry.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

# Reserved background categories; the renderer and the conditioning maps
# rely on these three existing in any palette.
BACKGROUND_LABELS = ("wall", "floor", "ceiling")


@dataclass(frozen=True)
class SemanticPalette:
    """Ordered, injective mapping from label text to an RGB triple in {0..255}^3."""

    entries: tuple[tuple[str, tuple[int, int, int]], ...]
    _table: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        table = {}
        seen_colors = {}
        for label, rgb in self.entries:
            if label in table:
                raise ValidationError(f"palette: duplicate label {label!r}")
            if rgb in seen_colors:
                raise ValidationError(
                    f"palette: color {rgb} shared by {seen_colors[rgb]!r} and {label!r}"
                )
            if not all(0 <= v <= 255 for v in rgb):
                raise ValidationError(f"palette: color out of range for {label!r}: {rgb}")
            table[label] = rgb
            seen_colors[rgb] = label
        object.__setattr__(self, "_table", table)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.entries)

    def __contains__(self, label: str) -> bool:
        return label in self._table

    def rgb_u8(self, label: str) -> tuple[int, int, int]:
        """Palette entry for ``label``, or a stable hash fallback if unknown.

        The fallback probes SHA-256 of ``label`` (salted on collision) until it
        finds a color not used by any committed entry, so it never aliases a
        real category.
        """
        hit = self._table.get(label)
        if hit is not None:
            return hit
        committed = set(self._table.values())
        salt = 0
        while True:
            digest = hashlib.sha256(f"{label}\x00{salt}".encode("utf-8")).digest()
            rgb = (digest[0], digest[1], digest[2])
            if rgb not in committed:
                return rgb
            salt += 1

    def rgb_float(self, label: str) -> np.ndarray:
        """Same lookup as :meth:`rgb_u8` scaled to [0, 1] float64."""
        return np.asarray(self.rgb_u8(label), dtype=np.float64) / 255.0

    def save(self, path: str | Path) -> None:
        lines = [f"{label},{r},{g},{b}" for label, (r, g, b) in self.entries]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_palette(path: str | Path) -> SemanticPalette:
    """Parse a ``label,R,G,B`` lines file into a palette."""
    entries = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise ParseError(f"{path}:{lineno}: expected 'label,R,G,B', got {raw!r}")
        label = parts[0].strip()
        try:
            rgb = tuple(int(p) for p in parts[1:])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: non-integer channel in {raw!r}") from exc
        entries.append((label, rgb))
    return SemanticPalette(tuple(entries))


def default_palette() -> SemanticPalette:
    """The committed 40-entry indoor palette shipped with the package."""
    with resources.as_file(resources.files("roomsplat.data") / "palette.csv") as p:
        return load_palette(p)
