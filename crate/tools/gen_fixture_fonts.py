#!/usr/bin/env python3
"""Generate the committed test fixture fonts.

Two TrueType faces share a per-codepoint stroke skeleton; the "sans" face
draws bare strokes and the "serif" face adds nubs at stroke ends, so the
sans->serif mapping is consistent and learnable. A third file packs both
faces into a TrueType collection.

Coverage (shared): U+4E00..U+4E00+0x44B, U+6C38, ASCII letters/digits,
U+0020 (blank glyph). U+E000 exists only in sans, U+E001 only in serif.
U+20000 forces a format 12 cmap subtable. Codepoints where cp % 53 == 0 are composite glyphs referencing two earlier
base glyphs; some strokes are drawn as quadratic-curve dots.

Requires fontTools. Output: crates/core/tests/fixtures/{fixture-sans.ttf,
fixture-serif.ttf, fixture.ttc}.
"""

import random
from pathlib import Path

from fontTools.fontBuilder import FontBuilder
from fontTools.pens.ttGlyphPen import TTGlyphPen
from fontTools.ttLib import TTCollection, TTFont

UPM = 1024
BOX = (80, 80, 944, 944)  # usable em box (xmin, ymin, xmax, ymax)
CJK_START = 0x4E00
CJK_COUNT = 0x44C  # 1100 codepoints
ASCII = [ord(c) for c in
         "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789"]
OUT = Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures"


def glyph_name(cp):
    return "uni%04X" % cp


def rect(pen, x0, y0, x1, y1):
    pen.moveTo((x0, y0))
    pen.lineTo((x1, y0))
    pen.lineTo((x1, y1))
    pen.lineTo((x0, y1))
    pen.closePath()


def dot(pen, cx, cy, r):
    # Circle from four quadratic arcs.
    pen.moveTo((cx + r, cy))
    pen.qCurveTo((cx + r, cy + r), (cx, cy + r))
    pen.qCurveTo((cx - r, cy + r), (cx - r, cy))
    pen.qCurveTo((cx - r, cy - r), (cx, cy - r))
    pen.qCurveTo((cx + r, cy - r), (cx + r, cy))
    pen.closePath()


def strokes_for(cp):
    """Deterministic skeleton: list of ('h'|'v'|'dot', geometry)."""
    rng = random.Random(cp)
    x0, y0, x1, y1 = BOX
    out = []
    for _ in range(rng.randint(3, 6)):
        kind = rng.choice(["h", "h", "v", "v", "dot"])
        if kind == "h":
            y = rng.randrange(y0 + 60, y1 - 60, 16)
            a = rng.randrange(x0, x0 + 200, 16)
            b = rng.randrange(x1 - 200, x1, 16)
            out.append(("h", (a, y, b)))
        elif kind == "v":
            x = rng.randrange(x0 + 60, x1 - 60, 16)
            a = rng.randrange(y0, y0 + 200, 16)
            b = rng.randrange(y1 - 200, y1, 16)
            out.append(("v", (x, a, b)))
        else:
            cx = rng.randrange(x0 + 120, x1 - 120, 16)
            cy = rng.randrange(y0 + 120, y1 - 120, 16)
            out.append(("dot", (cx, cy, rng.randrange(40, 90, 8))))
    return out


def draw(cp, serif):
    pen = TTGlyphPen(None)
    w = 36 if not serif else 30  # stroke half-thickness
    nub = 64  # serif nub half-length
    for kind, g in strokes_for(cp):
        if kind == "h":
            a, y, b = g
            rect(pen, a, y - w, b, y + w)
            if serif:
                rect(pen, a - 10, y - w - 24, a + nub, y - w)
                rect(pen, b - nub, y + w, b + 10, y + w + 24)
        elif kind == "v":
            x, a, b = g
            rect(pen, x - w, a, x + w, b)
            if serif:
                rect(pen, x - w - 24, a - 10, x + w + 24, a + 14)
                rect(pen, x - w - 24, b - 14, x + w + 24, b + 10)
        else:
            cx, cy, r = g
            dot(pen, cx, cy, r if not serif else r + 14)
    return pen.glyph()


def composite(glyphs, base_a, base_b):
    pen = TTGlyphPen(glyphs)
    pen.addComponent(base_a, (0.55, 0, 0, 0.55, 0, 300))
    pen.addComponent(base_b, (0.55, 0, 0, 0.55, 380, 0))
    return pen.glyph()


def build(style, private_cp):
    serif = style == "serif"
    cps = [CJK_START + i for i in range(CJK_COUNT)] + [0x6C38, 0x20000] + ASCII
    cps = sorted(set(cps))

    order = [".notdef", "space"]
    glyphs = {".notdef": draw(0x25A1, serif), "space": TTGlyphPen(None).glyph()}
    cmap = {0x20: "space"}

    simple = [cp for cp in cps if cp % 53 != 0]
    comp = [cp for cp in cps if cp % 53 == 0]
    for cp in simple:
        n = glyph_name(cp)
        order.append(n)
        glyphs[n] = draw(cp, serif)
        cmap[cp] = n
    for i, cp in enumerate(comp):
        n = glyph_name(cp)
        a = glyph_name(simple[(2 * i + 1) % len(simple)])
        b = glyph_name(simple[(5 * i + 3) % len(simple)])
        order.append(n)
        glyphs[n] = composite(glyphs, a, b)
        cmap[cp] = n

    pcp = private_cp
    n = glyph_name(pcp)
    order.append(n)
    glyphs[n] = draw(pcp, serif)
    cmap[pcp] = n

    fb = FontBuilder(UPM, isTTF=True)
    fb.setupGlyphOrder(order)
    fb.setupCharacterMap(cmap)
    fb.setupGlyf(glyphs)
    fb.setupHorizontalMetrics({g: (UPM, 0) for g in order})
    fb.setupHorizontalHeader(ascent=944, descent=-80)
    name = "Fixture %s" % style.capitalize()
    fb.setupNameTable({"familyName": name, "styleName": "Regular",
                       "fullName": name, "psName": name.replace(" ", "-")})
    fb.setupOS2(sTypoAscender=944, sTypoDescender=-80)
    fb.setupPost()
    return fb.font


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    sans = build("sans", 0xE000)
    serif = build("serif", 0xE001)
    sans.save(OUT / "fixture-sans.ttf")
    serif.save(OUT / "fixture-serif.ttf")

    ttc = TTCollection()
    ttc.fonts = [TTFont(OUT / "fixture-sans.ttf"),
                 TTFont(OUT / "fixture-serif.ttf")]
    ttc.save(OUT / "fixture.ttc")
    for p in sorted(OUT.iterdir()):
        print(p.name, p.stat().st_size, "bytes")


if __name__ == "__main__":
    main()
