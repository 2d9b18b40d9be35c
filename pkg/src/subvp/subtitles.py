"""SRT / WebVTT parsing and per-timestep subtitle features."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

from .errors import ParseError, ValidationError

_SRT_TIME = r"(\d{1,3}):([0-5]\d):([0-5]\d)[,.](\d{3})"
_SRT_TIMING = re.compile(rf"^\s*{_SRT_TIME}\s*-->\s*{_SRT_TIME}\s*$")
_VTT_TIME = r"(?:(\d{1,3}):)?([0-5]\d):([0-5]\d)\.(\d{3})"
_VTT_TIMING = re.compile(rf"^\s*{_VTT_TIME}\s+-->\s+{_VTT_TIME}(?:\s+.*)?$")
_WS = re.compile(r"\s+")


@dataclass(frozen=True)
class SubtitleCue:
    index: int
    start: float
    end: float
    text: str

    def __post_init__(self):
        if not (0.0 <= self.start < self.end):
            raise ValidationError(f"cue {self.index}: need 0 <= start < end, got {self.start}, {self.end}")
        text = self.text.strip()
        if not text:
            raise ValidationError(f"cue {self.index}: empty text")
        object.__setattr__(self, "text", text)


@dataclass(frozen=True)
class SubtitleTrack:
    cues: tuple = ()

    def __post_init__(self):
        cues = tuple(sorted(self.cues, key=lambda c: (c.start, c.end, c.index)))
        object.__setattr__(self, "cues", cues)

    def __len__(self):
        return len(self.cues)

    def __iter__(self):
        return iter(self.cues)

    @property
    def overlaps(self):
        """Index pairs of cues whose time ranges intersect."""
        pairs = []
        for i, a in enumerate(self.cues):
            for b in self.cues[i + 1:]:
                if b.start >= a.end:
                    break
                pairs.append((a.index, b.index))
        return pairs

    def active(self, time: float):
        return [c for c in self.cues if c.start <= time < c.end]


def _decode(data) -> str:
    if isinstance(data, (bytes, bytearray)):
        try:
            data = bytes(data).decode("utf-8")
        except UnicodeDecodeError as exc:
            line = bytes(data[:exc.start]).count(b"\n") + 1
            raise ParseError(f"not valid UTF-8 ({exc.reason} at byte {exc.start})", line) from None
    data = data.lstrip("﻿")
    return data.replace("\r\n", "\n").replace("\r", "\n")


def _ms(h, m, s, ms) -> int:
    return ((int(h or 0) * 60 + int(m)) * 60 + int(s)) * 1000 + int(ms)


def _blocks(lines):
    """Yield ``(first_line_number, [lines])`` for blank-separated blocks."""
    block, start = [], None
    for no, line in enumerate(lines, 1):
        if line.strip():
            if not block:
                start = no
            block.append(line)
        elif block:
            yield start, block
            block = []
    if block:
        yield start, block


def _make_cue(index, start_ms, end_ms, text_lines, line_no):
    text = "\n".join(line.rstrip() for line in text_lines).strip()
    if not text:
        raise ParseError("cue has no text", line_no)
    if not start_ms < end_ms:
        raise ParseError("cue end is not after its start", line_no)
    return SubtitleCue(index, start_ms / 1000.0, end_ms / 1000.0, text)


def parse_srt(data) -> SubtitleTrack:
    text = _decode(data)
    cues = []
    for line_no, block in _blocks(text.split("\n")):
        if "-->" in block[0]:
            index, timing_at = len(cues) + 1, 0
        else:
            if not block[0].strip().isdigit():
                raise ParseError(f"expected cue number, got {block[0].strip()[:40]!r}", line_no)
            index, timing_at = int(block[0]), 1
        if timing_at >= len(block):
            raise ParseError("cue number without timing line", line_no)
        m = _SRT_TIMING.match(block[timing_at])
        if m is None:
            raise ParseError(f"malformed timing line {block[timing_at].strip()[:60]!r}", line_no + timing_at)
        g = m.groups()
        cues.append(_make_cue(index, _ms(*g[:4]), _ms(*g[4:]), block[timing_at + 1:], line_no + timing_at))
    return SubtitleTrack(tuple(cues))


def parse_vtt(data) -> SubtitleTrack:
    text = _decode(data)
    lines = text.split("\n")
    if not lines or not re.match(r"^WEBVTT(?:[ \t].*)?$", lines[0]):
        raise ParseError("missing WEBVTT header", 1)
    cues = []
    for n, (line_no, block) in enumerate(_blocks(lines)):
        if n == 0:
            continue  # header block
        head = block[0].strip()
        if head.startswith(("NOTE", "STYLE", "REGION")) and "-->" not in head:
            continue
        timing_at = 0 if "-->" in block[0] else 1
        if timing_at >= len(block):
            raise ParseError("cue identifier without timing line", line_no)
        m = _VTT_TIMING.match(block[timing_at])
        if m is None:
            raise ParseError(f"malformed timing line {block[timing_at].strip()[:60]!r}", line_no + timing_at)
        index = len(cues) + 1
        if timing_at == 1 and head.isdigit():
            index = int(head)
        g = m.groups()
        cues.append(_make_cue(index, _ms(*g[:4]), _ms(*g[4:]), block[timing_at + 1:], line_no + timing_at))
    return SubtitleTrack(tuple(cues))


def _stamp(seconds: float, sep: str) -> str:
    ms = int(round(seconds * 1000))
    h, rem = divmod(ms, 3_600_000)
    m, rem = divmod(rem, 60_000)
    s, ms = divmod(rem, 1000)
    return f"{h:02d}:{m:02d}:{s:02d}{sep}{ms:03d}"


def serialize_srt(track: SubtitleTrack) -> str:
    out = []
    for cue in track:
        out.append(f"{cue.index}\n{_stamp(cue.start, ',')} --> {_stamp(cue.end, ',')}\n{cue.text}\n")
    return "\n".join(out)


def serialize_vtt(track: SubtitleTrack) -> str:
    out = ["WEBVTT\n"]
    for cue in track:
        out.append(f"{cue.index}\n{_stamp(cue.start, '.')} --> {_stamp(cue.end, '.')}\n{cue.text}\n")
    return "\n".join(out)


def read_subtitles(path) -> SubtitleTrack:
    """Parse a subtitle file, choosing the format from its content."""
    data = Path(path).read_bytes()
    head = _decode(data[:16]) if data else ""
    if head.startswith("WEBVTT"):
        return parse_vtt(data)
    return parse_srt(data)


def normalize_phrase(text: str) -> str:
    return _WS.sub(" ", text.strip().lower())


@dataclass(frozen=True)
class NavigationLexicon:
    """Directional phrases with dense token ids starting at 1 (0 = none)."""

    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = sorted(self.entries.values())
        if ids != list(range(1, len(ids) + 1)):
            raise ValidationError("lexicon token ids must be contiguous from 1")
        for phrase in self.entries:
            if phrase != normalize_phrase(phrase) or not phrase:
                raise ValidationError(f"lexicon phrase {phrase!r} is not normalized")

    @classmethod
    def from_phrases(cls, phrases):
        entries = {}
        for raw in phrases:
            phrase = normalize_phrase(raw)
            if phrase in entries:
                raise ValidationError(f"duplicate lexicon phrase {phrase!r}")
            entries[phrase] = len(entries) + 1
        return cls(entries)

    @classmethod
    def parse(cls, text: str):
        phrases = []
        for line in _decode(text).split("\n"):
            line = line.strip()
            if line and not line.startswith("#"):
                phrases.append(line)
        return cls.from_phrases(phrases)

    @classmethod
    def load(cls, path):
        return cls.parse(Path(path).read_bytes())

    @classmethod
    def default(cls):
        return cls.parse(resources.files("subvp.data").joinpath("default_lexicon.txt").read_bytes())

    def dumps(self) -> str:
        return "".join(f"{p}\n" for p in self.phrases)

    @property
    def phrases(self):
        return sorted(self.entries, key=self.entries.get)

    def __len__(self):
        return len(self.entries)

    def id(self, phrase: str) -> int:
        return self.entries[normalize_phrase(phrase)]

    def phrase(self, token: int) -> str:
        return self.phrases[token - 1]

    @cached_property
    def pattern(self):
        # longest alternatives first so the regex prefers the longest match
        alts = sorted(self.entries, key=lambda p: (-len(p), p))
        body = "|".join(re.escape(p) for p in alts)
        return re.compile(rf"(?<!\w)(?:{body})(?!\w)")


def extract_navigation(text: str, lexicon: NavigationLexicon):
    """Token ids of lexicon phrases in ``text``, longest match, left to right."""
    if not len(lexicon):
        raise ValidationError("empty navigation lexicon")
    norm = normalize_phrase(text)
    return [lexicon.entries[m.group(0)] for m in lexicon.pattern.finditer(norm)]


@dataclass(frozen=True)
class SubtitleFeatureFrame:
    t: int
    indicator: int
    nav_tokens: tuple = ()

    def __post_init__(self):
        if self.indicator not in (0, 1):
            raise ValidationError("indicator must be 0 or 1")
        if self.indicator == 0 and self.nav_tokens:
            raise ValidationError("navigation tokens without an active subtitle")


def n_steps(duration: float, dt: float) -> int:
    return int(math.ceil(duration / dt - 1e-9))


def timeline(track: SubtitleTrack, lexicon: NavigationLexicon, dt: float = 0.5, duration: float = None):
    """One :class:`SubtitleFeatureFrame` per ``dt`` step over ``[0, duration)``."""
    if not dt > 0:
        raise ValidationError("dt must be positive")
    if duration is None:
        duration = max((c.end for c in track), default=dt)
    if not duration > 0:
        raise ValidationError("duration must be positive")
    pattern = lexicon.pattern if len(lexicon) else None
    frames = []
    for t in range(n_steps(duration, dt)):
        active = track.active(round(t * dt, 9))
        if not active:
            frames.append(SubtitleFeatureFrame(t, 0, ()))
            continue
        text = normalize_phrase(" ".join(c.text for c in active))
        tokens = () if pattern is None else tuple(lexicon.entries[m.group(0)] for m in pattern.finditer(text))
        frames.append(SubtitleFeatureFrame(t, 1, tokens))
    return frames
