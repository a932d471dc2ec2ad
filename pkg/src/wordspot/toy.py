"""Synthetic word-image corpus used for desk-scale end-to-end runs.

The corpus shipped in ``wordspot/toydata`` was produced by
:func:`build_corpus` from the DejaVu fonts.  Every "page" is one simulated
writer: a font, a size and a per-character jitter profile.  Rendering needs
TrueType fonts, loading the bundled PNGs does not.
"""

from __future__ import annotations

import shutil
from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .data import write_manifest

WORDS = (
    "letter", "orders", "company", "captain", "regiment", "virginia", "william",
    "fort", "officers", "march", "soldiers", "money", "receive", "answer",
    "general", "colonel", "county", "public", "service", "winchester",
    "recruits", "provisions", "washington", "1756",
)

FONT_NAMES = (
    "DejaVuSans.ttf", "DejaVuSerif.ttf", "DejaVuSans-Oblique.ttf",
    "DejaVuSerif-Italic.ttf", "DejaVuSans-Bold.ttf", "DejaVuSansMono.ttf",
)

FONT_DIRS = (
    "/usr/share/fonts/truetype/dejavu",
)

TRAIN_PAGES = ("p01", "p02", "p03", "p04", "p05")
TEST_PAGES = ("p06", "p07", "p08")


def data_dir() -> Path:
    return Path(str(resources.files("wordspot") / "toydata"))


def _find_font(name: str) -> str:
    candidates = [Path(d) / name for d in FONT_DIRS]
    try:
        import matplotlib

        candidates.append(Path(matplotlib.get_data_path()) / "fonts" / "ttf" / name)
    except ImportError:
        pass
    for c in candidates:
        if c.is_file():
            return str(c)
    raise FileNotFoundError(f"font {name} not found; looked in {[str(c.parent) for c in candidates]}")


def render_word(word: str, font_path: str, size: int, rng: np.random.Generator,
                jitter: float = 1.5, margin: int = 4) -> np.ndarray:
    """Render ``word`` glyph by glyph with random baseline and spacing jitter."""
    font = ImageFont.truetype(font_path, size)
    canvas = Image.new("L", (size * (len(word) + 2), size * 3), 255)
    draw = ImageDraw.Draw(canvas)
    x = float(size)
    for ch in word:
        dy = rng.normal(0.0, jitter)
        draw.text((x, size + dy), ch, fill=int(rng.integers(0, 60)), font=font)
        x += draw.textlength(ch, font=font) + rng.normal(0.5, jitter / 2)
    arr = np.asarray(canvas)
    rows = np.flatnonzero((arr < 200).any(axis=1))
    cols = np.flatnonzero((arr < 200).any(axis=0))
    arr = arr[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]
    return np.pad(arr, margin, constant_values=255)


def build_corpus(out_dir, words=WORDS, seed: int = 1234) -> Path:
    """Write images plus ``train.tsv`` / ``test.tsv`` / ``all.tsv`` manifests."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    pages = TRAIN_PAGES + TEST_PAGES
    rng = np.random.default_rng(seed)
    writers = []
    for p, page in enumerate(pages):
        writers.append((page, _find_font(FONT_NAMES[p % len(FONT_NAMES)]),
                        int(rng.integers(15, 19)), float(rng.uniform(0.6, 1.4))))
    rows = {page: [] for page in pages}
    for page, font, size, jitter in writers:
        for w, word in enumerate(words):
            sid = f"{page}_{w:02d}"
            rel = f"images/{sid}.png"
            img = render_word(word, font, size, rng, jitter)
            Image.fromarray(img).save(out / rel, optimize=True)
            rows[page].append((sid, rel, word, page))
    write_manifest(out / "train.tsv", [r for p in TRAIN_PAGES for r in rows[p]])
    write_manifest(out / "test.tsv", [r for p in TEST_PAGES for r in rows[p]])
    write_manifest(out / "all.tsv", [r for p in pages for r in rows[p]])
    (out / "stopwords.txt").write_text("# toy stop-word list\nfort\n", encoding="utf-8")
    return out


def copy_corpus(dest) -> Path:
    dest = Path(dest)
    shutil.copytree(data_dir(), dest, dirs_exist_ok=True)
    return dest
