"""Regenerates the synthetic catalog, sketches, transcripts and eval samples."""
import json
import random
from pathlib import Path

from PIL import Image, ImageDraw

ROOT = Path(__file__).resolve().parent

PRODUCTS = [
    ("vase-red-ceramic", "Red ceramic vase", ["red", "ceramic", "vase", "home"]),
    ("vase-red-tall", "Tall red ceramic vase", ["red", "ceramic", "vase", "tall", "home"]),
    ("vase-blue-glass", "Blue glass vase", ["blue", "glass", "vase", "home"]),
    ("vase-white-porcelain", "White porcelain vase", ["white", "porcelain", "vase", "home"]),
    ("dress-white-wedding", "White lace wedding dress", ["white", "dress", "wedding", "formal"]),
    ("dress-black-evening", "Black evening dress", ["black", "dress", "evening", "formal"]),
    ("dress-floral-summer", "Floral summer dress", ["floral", "dress", "summer", "casual"]),
    ("chair-oak-dining", "Oak dining chair", ["oak", "wood", "chair", "dining"]),
    ("chair-green-velvet", "Green velvet armchair", ["green", "velvet", "chair", "living"]),
    ("chair-steel-office", "Steel office chair", ["steel", "chair", "office"]),
    ("lamp-brass-desk", "Brass desk lamp", ["brass", "lamp", "desk"]),
    ("lamp-paper-floor", "Paper floor lamp", ["paper", "lamp", "floor"]),
    ("mug-stoneware", "Stoneware mug", ["stoneware", "mug", "kitchen"]),
    ("mug-enamel-camp", "Enamel camping mug", ["enamel", "mug", "outdoor"]),
    ("sneaker-white-leather", "White leather sneaker", ["white", "leather", "sneaker", "shoe"]),
    ("boot-brown-hiking", "Brown hiking boot", ["brown", "boot", "hiking", "shoe"]),
    ("bag-canvas-tote", "Canvas tote bag", ["canvas", "bag", "tote"]),
    ("bag-leather-satchel", "Leather satchel", ["leather", "bag", "satchel"]),
    ("clock-wall-round", "Round wall clock", ["clock", "wall", "round"]),
    ("bowl-wooden-salad", "Wooden salad bowl", ["wood", "bowl", "kitchen"]),
    ("rug-wool-striped", "Striped wool rug", ["wool", "rug", "striped"]),
    ("pillow-linen-square", "Square linen pillow", ["linen", "pillow", "square"]),
    ("kettle-copper", "Copper kettle", ["copper", "kettle", "kitchen"]),
    ("watch-silver-dress", "Silver dress watch", ["silver", "watch", "formal"]),
]


def draw(path: Path, rng: random.Random) -> None:
    img = Image.new("RGB", (32, 32), tuple(rng.randrange(256) for _ in range(3)))
    d = ImageDraw.Draw(img)
    for _ in range(4):
        x0, y0 = rng.randrange(24), rng.randrange(24)
        d.rectangle([x0, y0, x0 + rng.randrange(2, 8), y0 + rng.randrange(2, 8)],
                    fill=tuple(rng.randrange(256) for _ in range(3)))
    img.save(path, format="PNG", optimize=False)


def main() -> None:
    rng = random.Random(20241)
    cat = ROOT / "catalog"
    (cat / "images").mkdir(parents=True, exist_ok=True)
    with open(cat / "catalog.jsonl", "w") as f:
        for pid, title, tags in PRODUCTS:
            rel = f"images/{pid}.png"
            draw(cat / rel, rng)
            f.write(json.dumps({"id": pid, "title": title, "tags": tags, "image_path": rel}) + "\n")

    sk = ROOT / "sketches"
    sk.mkdir(exist_ok=True)
    for name in ["vase", "dress", "chair"]:
        draw(sk / f"{name}.png", rng)

    tr = ROOT / "transcripts"
    tr.mkdir(exist_ok=True)
    turns = [
        {"query": "red ceramic vase", "sketch_path": "../sketches/vase.png"},
        {"query": "make it taller"},
        {"query": "what did I search before?"},
    ]
    with open(tr / "three_turn.jsonl", "w") as f:
        for t in turns:
            f.write(json.dumps(t) + "\n")

    # Closed loop: each sample's sketch is a catalog image, its tags the ground truth.
    with open(ROOT / "closed_loop_samples.jsonl", "w") as f:
        for pid, title, tags in PRODUCTS[:20]:
            f.write(json.dumps({
                "sketch_path": f"catalog/images/{pid}.png",
                "text_condition": title.lower(),
                "ground_truth_tags": tags,
                "preload_preferences": [f"prefers {tags[0]} items"],
            }) + "\n")

    with open(ROOT / "four_samples.jsonl", "w") as f:
        for pid, title, tags in PRODUCTS[:4]:
            f.write(json.dumps({
                "sketch_path": f"catalog/images/{pid}.png",
                "text_condition": title.lower(),
                "ground_truth_tags": tags,
                "preload_preferences": ["likes minimalist design", "budget under 50 dollars"],
            }) + "\n")


if __name__ == "__main__":
    main()
