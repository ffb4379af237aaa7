"""Desk-scale clip curation: sentence segmentation, multi-scale clip
extraction, low-FPS caption frame scheduling, and pluggable summarization.

Transcripts arrive as JSON lines, either word-level
{"video_id": ..., "words": [{"w": ..., "t0": ..., "t1": ...}, ...]} or
pre-segmented {"video_id": ..., "sentences": [{"text", "t0", "t1"}, ...]}.
Output is one JSON line per ClipRecord.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, asdict

import requests

log = logging.getLogger(__name__)

SCALE_NAMES = ("short", "medium", "long")
DEFAULT_SCALES = (13.0, 30.0, 60.0)

SUMMARIZE_PROMPT = ("Summarize the following sentences into a single sentence, "
                    "not exceeding 25 words. Do not output any additional text "
                    "and use any external information.")


class TransportError(RuntimeError):
    """External summarizer endpoint failure."""


@dataclass(frozen=True)
class TranscriptSentence:
    text: str
    start: float
    end: float

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError(f"sentence end {self.end} <= start {self.start}")

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass
class ClipRecord:
    video_id: str
    sentence_range: tuple[int, int]     # inclusive [a, b] indices
    start: float
    end: float
    scale: str
    subtitle: str
    caption: str = ""
    summarized_subtitle: str = ""
    summarized_caption: str = ""

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class SummarizerSpec:
    kind: str = "extractive-fallback"    # or "external-llm"
    endpoint: str = ""
    api_key: str = ""
    word_cap: int = 25

    def __post_init__(self):
        if self.kind not in ("external-llm", "extractive-fallback"):
            raise ValueError(f"unknown summarizer kind {self.kind!r}")
        if self.kind == "external-llm" and not self.endpoint:
            raise ValueError("external-llm summarizer needs an endpoint")


TERMINALS = (".", "!", "?")


def segment(words: list[dict]) -> list[TranscriptSentence]:
    """Split word-level transcript into sentences at terminal punctuation.

    Each word is {"w": str, "t0": float, "t1": float} with monotone times.
    A trailing run without terminal punctuation becomes the last sentence.
    """
    if not words:
        return []
    prev_end = -math.inf
    for i, w in enumerate(words):
        if w["t1"] < w["t0"] or w["t0"] < prev_end:
            raise ValueError(f"non-monotone timestamps at word {i}")
        prev_end = w["t0"]
    sentences = []
    buf: list[dict] = []
    for w in words:
        buf.append(w)
        if w["w"].rstrip().endswith(TERMINALS):
            sentences.append(_flush(buf))
            buf = []
    if buf:
        sentences.append(_flush(buf))
    return sentences


def _flush(buf: list[dict]) -> TranscriptSentence:
    return TranscriptSentence(" ".join(w["w"] for w in buf),
                              buf[0]["t0"], buf[-1]["t1"])


def extract_clips(video_id: str, sentences: list[TranscriptSentence],
                  scales: tuple[float, ...] = DEFAULT_SCALES) -> list[ClipRecord]:
    """Three independent greedy passes, one per target duration.

    A pass accumulates consecutive sentences while the clip span is below the
    target; the sentence that crosses the target is included only if that
    leaves the span closer to the target than stopping short would. A trailing
    remainder shorter than half the target merges into the previous clip.
    Clip boundaries always coincide with sentence boundaries.
    """
    if not sentences:
        raise ValueError("no sentences to extract clips from")
    n = len(sentences)
    clips = []
    for name, target in zip(SCALE_NAMES, scales):
        groups: list[tuple[int, int]] = []
        a = 0
        while a < n:
            b = a
            while True:
                span = sentences[b].end - sentences[a].start
                if span >= target or b + 1 == n:
                    break
                nxt = sentences[b + 1].end - sentences[a].start
                if nxt >= target:
                    if nxt - target <= target - span:
                        b += 1
                    break
                b += 1
            groups.append((a, b))
            a = b + 1
        tail_span = sentences[groups[-1][1]].end - sentences[groups[-1][0]].start
        if len(groups) > 1 and tail_span < target / 2.0:
            last = groups.pop()
            groups[-1] = (groups[-1][0], last[1])
        for a, b in groups:
            clips.append(ClipRecord(
                video_id=video_id,
                sentence_range=(a, b),
                start=sentences[a].start,
                end=sentences[b].end,
                scale=name,
                subtitle=" ".join(s.text for s in sentences[a:b + 1]),
            ))
    return clips


def caption_frames(clip: ClipRecord, fps: float) -> list[float]:
    """Frame timestamps for captioning: clip start + k/fps, k = 0, 1, ...;
    count = max(1, floor(duration*fps) + 1)."""
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    count = max(1, int(math.floor(clip.duration * fps)) + 1)
    return [clip.start + k / fps for k in range(count)]


def _fallback_summary(texts: list[str], word_cap: int) -> str:
    words = " ".join(texts).split()
    return " ".join(words[:word_cap])


def summarize(texts: list[str], spec: SummarizerSpec,
              post=None) -> str:
    """Summarize texts per the spec; external endpoint gets one retry, then
    the extractive fallback. `post` injects the HTTP transport for tests."""
    if not texts:
        raise ValueError("nothing to summarize")
    if spec.kind == "extractive-fallback":
        return _fallback_summary(texts, spec.word_cap)
    payload = {"prompt": SUMMARIZE_PROMPT, "input": "\n".join(texts)}
    post = post or _http_post
    last = None
    for attempt in range(2):
        try:
            return post(spec, payload)
        except TransportError as exc:
            last = exc
            log.warning("summarizer attempt %d failed: %s", attempt + 1, exc)
    log.warning("summarizer unreachable (%s); using extractive fallback", last)
    return _fallback_summary(texts, spec.word_cap)


def _http_post(spec: SummarizerSpec, payload: dict) -> str:
    headers = {}
    if spec.api_key:
        headers["Authorization"] = f"Bearer {spec.api_key}"
    try:
        resp = requests.post(spec.endpoint, json=payload, headers=headers,
                             timeout=30)
        resp.raise_for_status()
        return resp.json()["output"]
    except (requests.RequestException, KeyError, ValueError) as exc:
        raise TransportError(str(exc)) from exc


def summarize_clips(clips: list[ClipRecord], spec: SummarizerSpec,
                    post=None) -> None:
    """Fill the summarized fields in place. Short-scale subtitles and captions
    bypass summarization: their summarized fields equal the raw text."""
    for clip in clips:
        if clip.scale == "short":
            clip.summarized_subtitle = clip.subtitle
            clip.summarized_caption = clip.caption
            continue
        clip.summarized_subtitle = summarize([clip.subtitle], spec, post=post)
        if clip.caption:
            clip.summarized_caption = summarize([clip.caption], spec, post=post)


def stats(clips: list[ClipRecord]) -> dict[str, dict[str, float]]:
    """Per-scale table: count, mean duration, mean sentence count, mean word
    counts before/after summarization."""
    if not clips:
        raise ValueError("no clips")
    table = {}
    for name in SCALE_NAMES:
        group = [c for c in clips if c.scale == name]
        if not group:
            continue
        n = len(group)
        table[name] = {
            "count": n,
            "mean_duration": sum(c.duration for c in group) / n,
            "mean_sentences": sum(c.sentence_range[1] - c.sentence_range[0] + 1
                                  for c in group) / n,
            "mean_subtitle_words": sum(len(c.subtitle.split()) for c in group) / n,
            "mean_summarized_subtitle_words":
                sum(len(c.summarized_subtitle.split()) for c in group) / n,
            "mean_caption_words": sum(len(c.caption.split()) for c in group) / n,
            "mean_summarized_caption_words":
                sum(len(c.summarized_caption.split()) for c in group) / n,
        }
    return table


# -- JSONL plumbing -----------------------------------------------------------

def read_transcript_line(line: str) -> tuple[str, list[TranscriptSentence]]:
    rec = json.loads(line)
    vid = rec.get("video_id", "")
    if "sentences" in rec:
        sents = [TranscriptSentence(s["text"], s["t0"], s["t1"])
                 for s in rec["sentences"]]
    elif "words" in rec:
        sents = segment(rec["words"])
    else:
        raise ValueError("transcript line has neither 'sentences' nor 'words'")
    return vid, sents


def clip_to_json(clip: ClipRecord) -> str:
    d = asdict(clip)
    d["sentence_range"] = list(clip.sentence_range)
    return json.dumps(d)
