"""Deterministic synthetic corpus of simple children's stories.

Stands in for a real short-story dataset in tests, smoke runs, and demos: the
text is templated and highly regular, so a small model can make visible
progress on it within a few epochs on a CPU. Same (count, seed) always
produces byte-identical stories.
"""

from __future__ import annotations

import numpy as np

__all__ = ["generate_story", "generate_stories", "write_corpus"]

_NAMES = (
    "Lily", "Tom", "Ben", "Mia", "Sam", "Anna", "Max", "Sue", "Tim", "Amy",
    "Jack", "Emma", "Leo", "Ruby", "Finn", "Zoe", "Noah", "Ella", "Oliver", "Grace",
)
_THINGS = (
    "ball", "kite", "cake", "boat", "drum", "apple", "balloon", "wagon",
    "flower", "cookie", "teddy bear", "sock", "hat", "book", "spoon", "ribbon",
)
_ANIMALS = ("dog", "cat", "bird", "frog", "duck", "bunny", "pony", "kitten", "puppy", "mouse")
_PLACES = ("park", "garden", "beach", "kitchen", "yard", "forest", "pond", "hill", "barn", "playground")
_ADJS = ("big", "small", "red", "blue", "happy", "funny", "soft", "shiny", "tiny", "bright")
_FRIENDS = ("mom", "dad", "grandma", "grandpa", "best friend", "little brother", "big sister")

_BODY_TEMPLATES = (
    "One day, {name} went to the {place} with a {adj} {thing}.",
    "{name} saw a {adj} {animal} near the {place}.",
    "The {animal} wanted to play with the {thing}.",
    "{name} laughed and gave the {thing} to the {animal}.",
    "Then {name} and the {animal} ran around the {place}.",
    "The {adj} {animal} jumped up and down with joy.",
    "{name} found a {adj} {thing} under a tree.",
    "\"Look at my {thing}!\" said {name} to the {animal}.",
    "The {animal} carried the {thing} all the way home.",
    "{name} shared the {thing} with a {friend}.",
    "After that, {name} felt very {adj} and smiled.",
    "The {friend} said the {thing} was very {adj}.",
    "{name} put the {thing} next to the {adj} {animal}.",
    "They played in the {place} until the sun went down.",
    "A {adj} {animal} watched them from the {place}.",
    "{name} told the {friend} all about the {adj} {animal}.",
)

_CLOSERS = (
    "Then they all went home to sleep. The end.",
    "Everyone was happy and tired. The end.",
    "It was the best day ever. The end.",
    "They promised to play again tomorrow. The end.",
)


def generate_story(rng: np.random.Generator, body_sentences: int = 13) -> str:
    """One story of roughly 150-200 words built from fixed templates."""
    name = _NAMES[rng.integers(len(_NAMES))]
    who = "girl" if rng.integers(2) else "boy"
    parts = [f"Once upon a time, there was a little {who} named {name}."]
    for _ in range(body_sentences):
        template = _BODY_TEMPLATES[rng.integers(len(_BODY_TEMPLATES))]
        parts.append(
            template.format(
                name=name,
                thing=_THINGS[rng.integers(len(_THINGS))],
                animal=_ANIMALS[rng.integers(len(_ANIMALS))],
                place=_PLACES[rng.integers(len(_PLACES))],
                adj=_ADJS[rng.integers(len(_ADJS))],
                friend=_FRIENDS[rng.integers(len(_FRIENDS))],
            )
        )
    parts.append(_CLOSERS[rng.integers(len(_CLOSERS))])
    return " ".join(parts)


def generate_stories(count: int, seed: int = 0, body_sentences: int = 13) -> list[str]:
    rng = np.random.default_rng([seed, 0x70C0])
    return [generate_story(rng, body_sentences) for _ in range(count)]


def write_corpus(path, count: int, seed: int = 0, body_sentences: int = 13) -> None:
    """One story per line ('plain' corpus format)."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for story in generate_stories(count, seed, body_sentences):
            f.write(story + "\n")


def main(argv=None) -> int:
    import argparse

    ap = argparse.ArgumentParser(description="write a synthetic story corpus (one story per line)")
    ap.add_argument("out", help="output path")
    ap.add_argument("--stories", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--sentences", type=int, default=13, help="body sentences per story")
    args = ap.parse_args(argv)
    write_corpus(args.out, args.stories, args.seed, args.sentences)
    print(f"wrote {args.stories} stories to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
