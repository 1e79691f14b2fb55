#!/usr/bin/env python3
"""Regenerates the 2000-record prompt-set fixture and its manifest.

The manifest is computed by re-reading the written file line by line, so it
is an independent count of what the Rust loader must reproduce.
"""
import hashlib
import json
import random
import sys
from collections import Counter
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures"

SKILLS = [
    "entity", "attribute", "relation", "action", "spatial", "scale", "count",
    "color", "shape", "texture_material", "style", "text_rendering", "named_entity",
]
SOURCES = ["drawbench", "parti", "coco", "t2i_compbench", "dsg1k"]
SUBJECTS = ["dog", "cat", "gecko", "teapot", "bicycle", "lighthouse", "robot", "violin", "café", "kōan"]
MODIFIERS = ["red", "tiny", "wooden", "glass", "striped", "enormous", "blue", "square"]
SCENES = ["on a beach", "in a library", "under a bridge", "next to a window", "in the snow"]
S_SUBSKILLS = {
    "count": ["simple", "additive", "negation"],
    "spatial": ["left_right", "above_below", "in_front"],
    "text_rendering": ["english", "gibberish", "non_english"],
    "shape": ["regular", "irregular"],
    "color": ["single", "multiple", "uncommon"],
    "scale": ["relative", "absolute"],
    "action": ["interaction", "solo"],
    "style": ["painting", "render"],
    "named_entity": ["landmark", "artwork"],
}


def text(rng):
    parts = [rng.choice(["A", "Two", "Several"]), rng.choice(MODIFIERS), rng.choice(SUBJECTS), rng.choice(SCENES)]
    return " ".join(parts) + "."


def r_record(rng, i):
    skills = rng.sample(SKILLS, rng.randint(0, 3))
    return {
        "id": f"r{i:04}",
        "text": text(rng),
        "source": rng.choice(SOURCES),
        "skills": [{"category": s, "detail": None} if rng.random() < 0.5 else {"category": s} for s in skills],
    }


def s_record(rng, i):
    skill = rng.choice(sorted(S_SUBSKILLS))
    sub = rng.choice(S_SUBSKILLS[skill])
    skills = [{"category": skill, "detail": sub}]
    if rng.random() < 0.3:
        skills.append({"category": "lang_complexity"})
    return {
        "id": f"s{i:04}",
        "text": text(rng),
        "source": "gecko_s",
        "skills": skills,
        "sub_skill": sub,
    }


CAPTIONS = [
    ('"blorp zink fadoo qua"', 'a neon sign reading "blorp zink fadoo qua" above a late-night diner'),
    ('"vemt olo krass tibi"', 'a chalkboard menu with "vemt olo krass tibi" written in looping script'),
    ('"sna pwett gorrumbo"', 'a birthday cake iced with the words "sna pwett gorrumbo"'),
]


def fixture_key(capability, parts):
    h = hashlib.sha256(capability.encode())
    for p in parts:
        h.update(b"\x1f")
        h.update(p.encode())
    return h.hexdigest()


def caption_fixture():
    """Generation log replayed by the sub-skill prompt test."""
    template = (Path(__file__).resolve().parent.parent / "crates/core/assets/caption_text_rendering.txt").read_text()
    filled = template.replace("{text_length}", "20").replace("{language}", "Gibberish")
    with (OUT / "caption_replay.jsonl").open("w", encoding="utf-8") as f:
        for i, (text, caption) in enumerate(CAPTIONS):
            entry = {
                "key": fixture_key("generation", ["caption_text_rendering", filled, str(i)]),
                "capability": "generation",
                "request": {"template_id": "caption_text_rendering", "sample": i},
                "response": f" {text}\nCaption: {caption}\n",
            }
            f.write(json.dumps(entry, ensure_ascii=False) + "\n")


PIPELINE_PROMPTS = [
    ("A red dog sleeps on a sofa.", [("red", "attribute"), ("dog", "entity"), ("sleeps", "action"), ("sofa", "entity")]),
    ("Two cats sit by a window.", [("Two", "count"), ("cats", "entity"), ("window", "entity")]),
    ("A yellow bus on a wet street.", [("yellow", "attribute"), ("bus", "entity"), ("wet", "attribute"), ("street", "entity")]),
    ("An old man reads a newspaper.", [("old", "attribute"), ("man", "entity"), ("reads", "action"), ("newspaper", "entity")]),
    ("A blue vase left of a lamp.", [("blue", "attribute"), ("vase", "entity"), ("left", "spatial"), ("lamp", "entity")]),
    ("Three apples in a wooden bowl.", [("Three", "count"), ("apples", "entity"), ("wooden", "attribute"), ("bowl", "entity")]),
    ("A child flies a green kite.", [("child", "entity"), ("flies", "action"), ("green", "attribute"), ("kite", "entity")]),
    ("A lighthouse under a stormy sky.", [("lighthouse", "entity"), ("stormy", "attribute"), ("sky", "entity")]),
    ("A watercolor painting of a fox.", [("watercolor", "style"), ("painting", "entity"), ("fox", "entity")]),
    ("A chef slices bread in a kitchen.", [("chef", "entity"), ("slices", "action"), ("bread", "entity"), ("kitchen", "entity")]),
]

PIPELINE = Path(__file__).resolve().parent.parent / "crates/cli/tests/fixtures/pipeline"


def markup(text, keywords):
    out, cursor = [], 0
    for i, (word, kind) in enumerate(keywords, start=1):
        at = text.index(word, cursor)
        out.append(text[cursor:at])
        out.append(f"{{{i}}}[{word}, {kind}]")
        cursor = at + len(word)
    out.append(text[cursor:])
    return "".join(out)


def question_for(word, kind, prompt):
    if kind == "entity":
        return f"Is there a {word.lower()} in the image?"
    if kind == "count":
        return f"Are there {word.lower()} of them?"
    return f"Is the image consistent with '{word}' in '{prompt}'?"


def pipeline_fixture():
    """Twenty (prompt, image) pairs scored end to end with mock backends."""
    rng = random.Random(4242)
    PIPELINE.mkdir(parents=True, exist_ok=True)
    script, questions = {}, []
    prompts, images = [], []
    for n, (text, keywords) in enumerate(PIPELINE_PROMPTS, start=1):
        pid = f"p{n:02d}"
        prompts.append({"id": pid, "text": text, "source": "pipeline", "skills": []})
        annotated = markup(text, keywords)
        script[f"coverage:{text}"] = annotated
        blocks, tifa = [], []
        for i, (word, kind) in enumerate(keywords, start=1):
            q = question_for(word, kind, text)
            questions.append(q)
            blocks.append(f"About {{{i}}}:\nQ: {q}\nChoices: yes, no\nA: yes")
            tifa.append(f"Q: {q}\nChoices: yes, no\nA: yes")
        script[f"qa:{annotated}"] = "\n".join(blocks) + "\n"
        script[f"tifa_qa:{text}"] = "\n".join(tifa) + "\n"
        for model in ("model_a", "model_b"):
            iid = f"{pid}-{model[-1]}"
            images.append({"prompt_id": pid, "image_id": iid, "uri": f"images/{iid}.png", "model_id": model})

    def dump_jsonl(name, rows):
        with (PIPELINE / name).open("w", encoding="utf-8") as f:
            for r in rows:
                f.write(json.dumps(r, ensure_ascii=False) + "\n")

    dump_jsonl("prompts.jsonl", prompts)
    dump_jsonl("images.jsonl", images)
    (PIPELINE / "gen.json").write_text(json.dumps(script, indent=1, ensure_ascii=False) + "\n")
    (PIPELINE / "vqa_yes.json").write_text(json.dumps({"answers": {"*": {q: "yes" for q in questions}}}, indent=1) + "\n")

    # Image-specific answers: model_a images are mostly right, model_b images less so.
    mixed = {}
    for img in images:
        p_yes = 0.85 if img["model_id"] == "model_a" else 0.55
        text = PIPELINE_PROMPTS[int(img["prompt_id"][1:]) - 1][0]
        table = {}
        for word, kind in PIPELINE_PROMPTS[int(img["prompt_id"][1:]) - 1][1]:
            y = round(min(0.98, max(0.02, rng.gauss(p_yes, 0.2))), 3)
            table[question_for(word, kind, text)] = [y, round(1 - y, 3)]
        mixed[img["image_id"]] = table
    (PIPELINE / "vqa_mixed.json").write_text(json.dumps({"answers": mixed}, indent=1) + "\n")

    ratings = []
    for img in images:
        text = PIPELINE_PROMPTS[int(img["prompt_id"][1:]) - 1][0]
        good = img["model_id"] == "model_a"
        for r in ("r1", "r2", "r3"):
            base = {"prompt_id": img["prompt_id"], "image_id": img["image_id"], "model_id": img["model_id"], "rater_id": r}
            value = min(5, max(1, round(rng.gauss(4.2 if good else 2.8, 0.8))))
            ratings.append({**base, "template": "likert", "payload": {"value": value}})
            p = 0.9 if good else 0.65
            labels = ["aligned" if rng.random() < p else "not_aligned" for _ in text.split()]
            ratings.append({**base, "template": "word_level", "payload": {"labels": labels}})
    for n in range(1, len(PIPELINE_PROMPTS) + 1):
        pid = f"p{n:02d}"
        for r in ("r1", "r2", "r3"):
            choice = "image_a" if rng.random() < 0.75 else rng.choice(["image_b", "unsure"])
            ratings.append({
                "prompt_id": pid, "image_id": f"{pid}-a|{pid}-b", "model_id": "model_a|model_b", "rater_id": r,
                "template": "sxs", "payload": {"image_a": f"{pid}-a", "image_b": f"{pid}-b", "choice": choice},
            })
    dump_jsonl("annotations.jsonl", ratings)

    backends = """[backends.generation]
uri = "mock:script:gen.json"

[backends.nli]
uri = "mock:const:1.0"

[backends.vqa]
uri = "mock:table:{vqa}"

[backends.embedding]
uri = "mock:hash"
"""
    (PIPELINE / "config.toml").write_text(backends.format(vqa="vqa_yes.json"))
    (PIPELINE / "config_mixed.toml").write_text(backends.format(vqa="vqa_mixed.json"))


def main():
    caption_fixture()
    pipeline_fixture()
    rng = random.Random(20240229)
    records = [r_record(rng, i) for i in range(1000)] + [s_record(rng, i) for i in range(1000)]
    path = OUT / "prompts_2000.jsonl"
    with path.open("w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")

    hist = Counter()
    sources = Counter()
    tag_pairs = 0
    lines = 0
    with path.open(encoding="utf-8") as f:
        for line in f:
            rec = json.loads(line)
            lines += 1
            sources[rec["source"]] += 1
            cats = [s["category"] for s in rec["skills"]]
            tag_pairs += len(cats)
            for c in set(cats):
                hist[c] += 1
    manifest = {
        "records": lines,
        "tag_pairs": tag_pairs,
        "sources": dict(sorted(sources.items())),
        "skill_histogram": dict(sorted(hist.items())),
    }
    (OUT / "prompts_2000.manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(json.dumps(manifest), file=sys.stderr)


if __name__ == "__main__":
    main()
