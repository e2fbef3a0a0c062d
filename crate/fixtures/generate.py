#!/usr/bin/env python3
"""Regenerates the fixture corpus, search index and QA set.

The output is committed; rerun only when changing the fixtures:

    python3 fixtures/generate.py
"""

import json
import random
from pathlib import Path

ROOT = Path(__file__).resolve().parent
SEED = 20240601

# (subject, predicate, object) facts per process family. Every endpoint is a
# surface form in the mock extractor's pattern table; predicates avoid
# pattern words so the mock reads them as relation phrases.
DOMAINS = {
    "refinery": [
        ("crude oil", "is heated in", "furnace"),
        ("furnace", "feeds", "distillation column"),
        ("distillation column", "produces", "naphtha"),
        ("distillation column", "sends vapour to", "condenser"),
        ("reboiler", "heats", "distillation column"),
        ("naphtha", "is upgraded in", "reformer"),
        ("naphtha", "passes through", "hydrotreating"),
        ("hydrotreating", "removes sulphur before", "reformer"),
        ("reformer", "releases", "hydrogen"),
        ("zeolite catalyst", "promotes", "cracking"),
        ("cracking", "yields", "ethylene"),
        ("cracking", "also yields", "propylene"),
        ("fractionation column", "splits", "benzene"),
        ("fractionation column", "recovers", "toluene"),
        ("pump", "transfers", "crude oil"),
        ("naphtha", "is kept in", "storage tank"),
        ("furnace", "burns", "fuel gas"),
        ("desulfurization", "treats", "fuel gas"),
    ],
    "ammonia": [
        ("natural gas", "enters", "steam reformer"),
        ("steam reformer", "makes", "syngas"),
        ("nickel catalyst", "lines", "steam reformer"),
        ("syngas", "flows to", "shift converter"),
        ("shift converter", "converts", "carbon monoxide"),
        ("shift converter", "forms", "carbon dioxide"),
        ("absorber", "captures", "carbon dioxide"),
        ("compressor", "pressurizes", "hydrogen"),
        ("hydrogen", "combines with", "nitrogen"),
        ("nitrogen", "enters", "synthesis reactor"),
        ("iron catalyst", "fills", "synthesis reactor"),
        ("synthesis reactor", "makes", "ammonia"),
        ("haber process", "requires", "high pressure"),
        ("haber process", "produces", "ammonia"),
        ("ammonia", "is condensed at", "low temperature"),
        ("ammonia", "reacts to form", "urea"),
        ("carbon dioxide", "is fed to", "urea"),
        ("ammonia", "is oxidized into", "nitric acid"),
    ],
    "sulfuric": [
        ("sulfur dioxide", "is dried in", "dryer"),
        ("dryer", "passes gas to", "converter"),
        ("vanadium pentoxide catalyst", "sits in", "converter"),
        ("converter", "oxidizes", "sulfur dioxide"),
        ("converter", "forms", "sulfur trioxide"),
        ("sulfur trioxide", "is absorbed in", "absorber"),
        ("absorber", "makes", "sulfuric acid"),
        ("contact process", "produces", "sulfuric acid"),
        ("contact process", "oxidizes", "sulfur dioxide"),
        ("heat exchanger", "cools", "sulfur trioxide"),
        ("air", "supplies", "oxygen"),
        ("oxygen", "is mixed with", "sulfur dioxide"),
        ("sulfuric acid", "is kept in", "storage tank"),
        ("heat exchanger", "raises", "steam"),
    ],
    "lithium": [
        ("spodumene", "is roasted in", "rotary kiln"),
        ("rotary kiln", "performs", "calcination"),
        ("calcination", "prepares", "spodumene"),
        ("spodumene", "undergoes", "leaching"),
        ("leaching", "gives", "lithium carbonate"),
        ("lithium carbonate", "is dissolved in", "water"),
        ("lithium carbonate", "reacts with", "sodium hydroxide"),
        ("evaporator", "concentrates", "lithium hydroxide"),
        ("crystallizer", "grows", "lithium hydroxide"),
        ("filter press", "removes solids from", "lithium hydroxide"),
        ("lithium hydroxide", "is sold as", "LiOH"),
        ("LiOH production", "uses", "crystallizer"),
        ("LiOH production", "starts from", "spodumene"),
        ("crystallization", "purifies", "LiOH"),
        ("dryer", "finishes", "LiOH"),
    ],
    "chloralkali": [
        ("brine", "is pumped into", "electrolyzer"),
        ("electrolyzer", "performs", "electrolysis"),
        ("electrolysis", "releases", "chlorine"),
        ("electrolysis", "forms", "sodium hydroxide"),
        ("electrolyzer", "evolves", "hydrogen"),
        ("sodium hydroxide", "is concentrated in", "evaporator"),
        ("chlorine", "is dried before", "compressor"),
        ("chlorine", "is kept in", "storage tank"),
        ("brine", "is purified by", "filter press"),
    ],
    "methanol": [
        ("synthesis gas", "is compressed by", "compressor"),
        ("synthesis gas", "enters", "reactor"),
        ("reactor", "produces", "methanol"),
        ("reactor", "uses", "nickel catalyst"),
        ("methanol", "is separated in", "flash drum"),
        ("flash drum", "feeds", "separator"),
        ("separator", "returns", "synthesis gas"),
        ("methanol", "is refined by", "distillation"),
        ("distillation", "removes", "water"),
        ("methane", "is reformed into", "synthesis gas"),
        ("steam reforming", "converts", "methane"),
    ],
}

# Shared plant services that connect the families.
SERVICES = [
    ("cooling tower", "supplies", "cooling water"),
    ("cooling water", "chills", "condenser"),
    ("cooling water", "chills", "heat exchanger"),
    ("boiler feed water", "makes", "steam"),
    ("steam", "drives", "compressor"),
    ("instrument air", "operates", "control valve"),
    ("temperature transmitter", "monitors", "reactor"),
    ("pressure transmitter", "monitors", "compressor"),
    ("flow controller", "adjusts", "control valve"),
    ("level controller", "holds", "flash drum"),
    ("pressure relief valve", "protects", "separator"),
    ("analyzer", "checks", "syngas"),
    ("pump", "circulates", "cooling water"),
    ("vacuum", "lowers pressure in", "evaporator"),
    ("high temperature", "is kept in", "furnace"),
]

TITLES = {
    "refinery": "Crude unit",
    "ammonia": "Ammonia loop",
    "sulfuric": "Acid plant",
    "lithium": "Hydroxide plant",
    "chloralkali": "Chlor-alkali cell room",
    "methanol": "Methanol unit",
}

FILLER = [
    "Operators review the log at every shift change.",
    "Maintenance is planned during the annual turnaround.",
    "The unit runs continuously for most of the year.",
    "Safety reviews are held before any change.",
]

KINDS = ["scholar", "patent", "wiki", "web"]


def sentence(fact):
    s, p, o = fact
    return f"The {s} {p} the {o}."


def paragraph(rng, facts, n):
    picked = rng.sample(facts, min(n, len(facts)))
    body = [sentence(f) for f in picked]
    body.insert(rng.randrange(len(body) + 1), rng.choice(FILLER))
    return " ".join(body)


def corpus(rng):
    docs = []
    domains = list(DOMAINS)
    for i in range(100):
        d = domains[i % len(domains)]
        facts = DOMAINS[d]
        n = rng.randint(6, 10)
        text = paragraph(rng, facts, n)
        if rng.random() < 0.4:
            text += " " + paragraph(rng, SERVICES, rng.randint(1, 3))
        if i % 25 == 3:
            # A few long documents span several chunks.
            text = " ".join(paragraph(rng, facts + SERVICES, 12) for _ in range(14))
        docs.append(
            {
                "id": f"doc{i:03d}",
                "source_kind": KINDS[i % len(KINDS)],
                "title": f"{TITLES[d]} note {i}",
                "text": text,
                "metadata": {"family": d},
            }
        )
    return docs


def search_index(rng):
    out = {}
    for kind in KINDS:
        docs = []
        for j, (d, facts) in enumerate(DOMAINS.items()):
            docs.append(
                {
                    "id": f"{kind}-{d}",
                    "source_kind": kind,
                    "title": f"{TITLES[d]} ({kind})",
                    "text": paragraph(rng, facts, 5),
                    "metadata": {},
                }
            )
        out[kind] = docs
    images = [
        ("distillation_pfd.png", "Distillation column process flow diagram"),
        ("ammonia_synthesis_loop_pfd.png", "Ammonia synthesis loop flow diagram"),
        ("sulfuric_acid_converter_pfd.png", "Sulfuric acid contact process diagram"),
        ("lithium_hydroxide_crystallizer_pfd.png", "Lithium hydroxide crystallizer diagram"),
        ("unrelated.png", "Office floor plan"),
    ]
    out["image"] = [
        {
            "id": f"img-{k}",
            "source_kind": "image",
            "title": title,
            "text": "",
            "metadata": {"file": f"images/{name}"},
        }
        for k, (name, title) in enumerate(images)
    ]
    return out


QA = [
    ("q01", "fact-based", "What does the synthesis reactor make?",
     "The synthesis reactor makes ammonia over an iron catalyst."),
    ("q02", "multi-hop", "Where does crude oil go after the furnace?",
     "Crude oil is heated in the furnace, which feeds the distillation column that produces naphtha."),
    ("q03", "causal", "Why is sulfur dioxide dried?",
     "Sulfur dioxide is dried in the dryer before the converter oxidizes it to sulfur trioxide."),
    ("q04", "procedural", "How is lithium hydroxide produced from spodumene?",
     "Spodumene is roasted in the rotary kiln, leached to lithium carbonate, reacted with sodium hydroxide, and lithium hydroxide is crystallized."),
    ("q05", "operational", "What monitors the compressor?",
     "A pressure transmitter monitors the compressor."),
    ("q06", "comparative", "How do the steam reformer and the reformer differ?",
     "The steam reformer makes syngas from natural gas while the reformer upgrades naphtha and releases hydrogen."),
    ("q07", "logical", "What does electrolysis of brine release?",
     "Electrolysis of brine releases chlorine and hydrogen and forms sodium hydroxide."),
    ("q08", "multi-hop", "What does syngas become after the shift converter?",
     "Syngas flows to the shift converter, which converts carbon monoxide and forms carbon dioxide captured by the absorber."),
    ("q09", "fact-based", "What catalyst sits in the converter?",
     "The vanadium pentoxide catalyst sits in the converter."),
    ("q10", "procedural", "How is methanol refined?",
     "Methanol is separated in the flash drum and refined by distillation, which removes water."),
]


def write_jsonl(path, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        for r in rows:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def main():
    rng = random.Random(SEED)
    write_jsonl(ROOT / "corpus.jsonl", corpus(rng))
    index = search_index(rng)
    manifest = {}
    for kind, rows in index.items():
        write_jsonl(ROOT / "search" / f"{kind}.jsonl", rows)
        manifest[kind] = f"{kind}.jsonl"
    (ROOT / "search" / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    write_jsonl(
        ROOT / "qa.jsonl",
        [{"id": i, "category": c, "question": q, "reference": r} for i, c, q, r in QA],
    )


if __name__ == "__main__":
    main()
