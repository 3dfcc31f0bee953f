"""Rule filtering and chunking over transcript metadata.

No audio is involved: each record carries utterances, a duration and a
precomputed quality score, and the rules decide keep or reject.
"""
import json
import tempfile
from pathlib import Path

from zipdialog.datapipe import FilterRuleSet, chunk_segments, filter_jsonl, rule_filter
from zipdialog.text import Utterance

chat = [Utterance("A" if i % 2 == 0 else "B", 6.0 * i, f"this is sentence number {i} ok")
        for i in range(10)]
for q in (3.4, 2.8, 2.7):
    res = rule_filter(chat, 60.0, q)
    print(f"quality {q}: keep={res.keep} reasons={res.reasons}")

rapid = [Utterance("A" if i % 2 == 0 else "B", 0.5 * i, "yes") for i in range(60)]
print("60 turns in 30 s:", rule_filter(rapid, 30.0, 3.5).reasons)

print("\nchunking speech spans into pieces of at most 30 s")
spans = [(0.0, 12.0), (13.0, 25.0), (26.0, 95.0), (97.0, 99.0)]
for a, b in chunk_segments(spans):
    print(f"  [{a:5.1f}, {b:5.1f}]  {b - a:4.1f}s")

with tempfile.TemporaryDirectory() as tmp:
    src, dst = Path(tmp) / "in.jsonl", Path(tmp) / "out.jsonl"
    records = [{"utterances": [{"speaker": u.speaker_key, "start": u.start_time, "text": u.text} for u in chat], "duration_s": 60.0, "quality_score": q}
               for q in (3.5, 2.5, 3.1)]
    src.write_text("".join(json.dumps(r) + "\n" for r in records))
    summary = filter_jsonl(src, dst, FilterRuleSet())
    print("\nJSONL summary:", summary)
