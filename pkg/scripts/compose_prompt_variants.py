#!/usr/bin/env python3
"""Regenerate the composed prompt-template variants.

Only a handful of (dataset, category) prompt files are written by hand (the
"canonical" files).  Every other dataset x category combination is a
mechanical recombination: the dataset family's context block + the
category's example bank + the shared tail.  This script rebuilds those
composed files from the canonical ones, so edits belong in the canonical
files, never in the composed output.

Usage:  python scripts/compose_prompt_variants.py
"""
from __future__ import annotations

import pathlib

from alignfeedback.core import MisalignmentType
from alignfeedback.generation import parse_template_text

PROMPTS_DIR = (
    pathlib.Path(__file__).resolve().parent.parent
    / "src" / "alignfeedback" / "data" / "prompts"
)

# Canonical sources, one per context family and one per category bank.
CONTEXT_SOURCE = {
    "coco": "coco_relation.txt",
    "pickapic": "pickapic_action.txt",
    "ade20k": "ade20k_attribute.txt",
}
# Datasets without a canonical context borrow the closest family's:
# flickr30k captions resemble coco's, imagereward's resemble pickapic's,
# openimages narratives are summarized like ade20k's.
CONTEXT_FAMILY = {
    "coco": "coco",
    "flickr30k": "coco",
    "pickapic": "pickapic",
    "imagereward": "pickapic",
    "ade20k": "ade20k",
    "openimages": "ade20k",
}
FEWSHOT_SOURCE = {
    MisalignmentType.OBJECT: "coco_object.txt",
    MisalignmentType.ATTRIBUTE: "ade20k_attribute.txt",
    MisalignmentType.ACTION: "pickapic_action.txt",
    MisalignmentType.RELATION: "coco_relation.txt",
}
TAIL_SOURCE = "coco_relation.txt"

CANONICAL = {
    "coco_relation.txt",
    "coco_object.txt",
    "pickapic_action.txt",
    "ade20k_attribute.txt",
    "narrative_summarize.txt",
    "seetrue_merge.txt",
}

PREAMBLE = """\
{category_name}-misalignment prompt, {dataset} caption style (composed).
Generated by scripts/compose_prompt_variants.py from {context_src} (context)
and {fewshot_src} (example bank); do not edit by hand.
Lines above --CONTEXT-- are ignored by the loader.
"""


def main() -> None:
    blocks = {
        name: parse_template_text((PROMPTS_DIR / name).read_text(encoding="utf-8"))
        for name in CANONICAL
    }
    tail = blocks[TAIL_SOURCE][2]
    written = []
    for dataset, family in CONTEXT_FAMILY.items():
        context_src = CONTEXT_SOURCE[family]
        context = blocks[context_src][0]
        for category in MisalignmentType:
            name = f"{dataset}_{category.value}.txt"
            if name in CANONICAL:
                continue
            fewshot_src = FEWSHOT_SOURCE[category]
            fewshot = blocks[fewshot_src][1]
            preamble = PREAMBLE.format(
                category_name=category.value.capitalize(),
                dataset=dataset,
                context_src=context_src,
                fewshot_src=fewshot_src,
            )
            body = (
                preamble
                + "--CONTEXT--\n" + context
                + "--FEWSHOT--\n" + fewshot
                + "--TAIL--\n" + tail
            )
            (PROMPTS_DIR / name).write_text(body, encoding="utf-8")
            written.append(name)
    print(f"wrote {len(written)} composed template(s) to {PROMPTS_DIR}")
    for name in sorted(written):
        print(f"  {name}")


if __name__ == "__main__":
    main()
