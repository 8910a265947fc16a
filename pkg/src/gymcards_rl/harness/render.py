"""Deterministic grayscale rendering of observations as binary PGM.

Text is drawn with an embedded 5x7 bitmap font (lowercase is drawn as
uppercase, unknown characters as a box). Cards get a framed glyph with their
rank and suit. Canvas size is fixed per task.
"""

from __future__ import annotations

import numpy as np

from ..env_core import Observation

_FONT_ROWS = {
    "0": "01110 10001 10011 10101 11001 10001 01110",
    "1": "00100 01100 00100 00100 00100 00100 01110",
    "2": "01110 10001 00001 00010 00100 01000 11111",
    "3": "11111 00010 00100 00010 00001 10001 01110",
    "4": "00010 00110 01010 10010 11111 00010 00010",
    "5": "11111 10000 11110 00001 00001 10001 01110",
    "6": "00110 01000 10000 11110 10001 10001 01110",
    "7": "11111 00001 00010 00100 01000 01000 01000",
    "8": "01110 10001 10001 01110 10001 10001 01110",
    "9": "01110 10001 10001 01111 00001 00010 01100",
    "A": "01110 10001 10001 11111 10001 10001 10001",
    "B": "11110 10001 10001 11110 10001 10001 11110",
    "C": "01110 10001 10000 10000 10000 10001 01110",
    "D": "11100 10010 10001 10001 10001 10010 11100",
    "E": "11111 10000 10000 11110 10000 10000 11111",
    "F": "11111 10000 10000 11110 10000 10000 10000",
    "G": "01110 10001 10000 10111 10001 10001 01111",
    "H": "10001 10001 10001 11111 10001 10001 10001",
    "I": "01110 00100 00100 00100 00100 00100 01110",
    "J": "00111 00010 00010 00010 00010 10010 01100",
    "K": "10001 10010 10100 11000 10100 10010 10001",
    "L": "10000 10000 10000 10000 10000 10000 11111",
    "M": "10001 11011 10101 10101 10001 10001 10001",
    "N": "10001 10001 11001 10101 10011 10001 10001",
    "O": "01110 10001 10001 10001 10001 10001 01110",
    "P": "11110 10001 10001 11110 10000 10000 10000",
    "Q": "01110 10001 10001 10001 10101 10010 01101",
    "R": "11110 10001 10001 11110 10100 10010 10001",
    "S": "01111 10000 10000 01110 00001 00001 11110",
    "T": "11111 00100 00100 00100 00100 00100 00100",
    "U": "10001 10001 10001 10001 10001 10001 01110",
    "V": "10001 10001 10001 10001 10001 01010 00100",
    "W": "10001 10001 10001 10101 10101 10101 01010",
    "X": "10001 10001 01010 00100 01010 10001 10001",
    "Y": "10001 10001 10001 01010 00100 00100 00100",
    "Z": "11111 00001 00010 00100 01000 10000 11111",
    " ": "00000 00000 00000 00000 00000 00000 00000",
    ":": "00000 01100 01100 00000 01100 01100 00000",
    "+": "00000 00100 00100 11111 00100 00100 00000",
    "-": "00000 00000 00000 11111 00000 00000 00000",
    "*": "00000 00100 10101 01110 10101 00100 00000",
    "/": "00000 00001 00010 00100 01000 10000 00000",
    "=": "00000 00000 11111 00000 11111 00000 00000",
    "(": "00010 00100 01000 01000 01000 00100 00010",
    ")": "01000 00100 00010 00010 00010 00100 01000",
    "?": "01110 10001 00001 00010 00100 00000 00100",
    ",": "00000 00000 00000 00000 01100 00100 01000",
    ".": "00000 00000 00000 00000 00000 01100 01100",
    "[": "01110 01000 01000 01000 01000 01000 01110",
    "]": "01110 00010 00010 00010 00010 00010 01110",
    "'": "01100 00100 01000 00000 00000 00000 00000",
    '"': "01010 01010 01010 00000 00000 00000 00000",
}
_UNKNOWN = "11111 10001 10001 10001 10001 10001 11111"


def _glyph(ch: str) -> np.ndarray:
    rows = _FONT_ROWS.get(ch.upper(), _UNKNOWN).split()
    return np.array([[c == "1" for c in r] for r in rows], dtype=bool)


GLYPHS = {ch: _glyph(ch) for ch in _FONT_ROWS}
SCALE = 2
CHAR_W, CHAR_H = 6 * SCALE, 8 * SCALE
CARD_W, CARD_H = 40, 56
MARGIN = 8

CANVAS = {
    "numberline": (224, 64),
    "blackjack": (320, 168),
    "ezpoints": (288, 168),
    "points24": (352, 168),
}


def draw_text(img: np.ndarray, x: int, y: int, text: str, value: int = 0) -> None:
    for i, ch in enumerate(text):
        g = GLYPHS.get(ch.upper())
        if g is None:
            g = _glyph(ch)
        g = np.kron(g, np.ones((SCALE, SCALE), dtype=bool))
        x0 = x + i * CHAR_W
        h = min(g.shape[0], img.shape[0] - y)
        w = min(g.shape[1], img.shape[1] - x0)
        if h <= 0 or w <= 0:
            continue
        region = img[y:y + h, x0:x0 + w]
        region[g[:h, :w]] = value


def draw_card(img: np.ndarray, x: int, y: int, label: str) -> None:
    h = min(CARD_H, img.shape[0] - y)
    w = min(CARD_W, img.shape[1] - x)
    if h <= 0 or w <= 0:
        return
    img[y:y + h, x:x + w] = 255
    img[y:y + h, x] = img[y:y + h, x + w - 1] = 0
    img[y, x:x + w] = img[y + h - 1, x:x + w] = 0
    draw_text(img, x + 4, y + 4, label)


def _card_labels(obs: Observation) -> list[str]:
    s = obs.symbolic
    if obs.task_id == "blackjack":
        dealer = s.get("dealer", [])
        labels = list(dealer) if len(dealer) > 1 else list(dealer) + ["??"]
        return labels + ["|"] + list(s["player"])
    if "cards" in s:
        return list(s["cards"])
    return []


def render_image(obs: Observation) -> np.ndarray:
    """Fixed-size uint8 raster for ``obs``; text lines on top, cards below."""
    W, H = CANVAS[obs.task_id]
    img = np.full((H, W), 230, dtype=np.uint8)
    lines = obs.text_render.split("\n")
    y = MARGIN
    for line in lines:
        draw_text(img, MARGIN, y, line)
        y += CHAR_H + 2
    x = MARGIN
    for label in _card_labels(obs):
        if label == "|":
            x += MARGIN
            continue
        draw_card(img, x, y + 4, label)
        x += CARD_W + 4
    return img


def to_pgm(img: np.ndarray) -> bytes:
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img, dtype=np.uint8).tobytes()


def render_pgm(obs: Observation) -> bytes:
    return to_pgm(render_image(obs))
