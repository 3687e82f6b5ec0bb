"""Synthetic dialogue corpora for tests, demos, and benchmarks.

Three generated domains: a tiny reservation grammar ("toy") and a pair of
related booking domains ("movies", "restaurants") whose slot descriptions
share wording, so models trained on one domain have something to transfer
to the other. Multi-token slot values are built by recombining a fixed
word inventory; a value type held out of training is then a new
combination of mostly familiar tokens, which is the regime the value-aware
splitter is designed to measure.

Run as a module to write corpus and schema files:

    python3 -m slotfill.synthetic OUTDIR --seed 7
"""

from __future__ import annotations

import argparse
import json
from typing import Sequence

import numpy as np

from .slot_encoder import SlotSchema, save_schemas

_ADJ = ["blue", "green", "red", "golden", "silver", "white", "royal", "iron", "old", "grand"]
_NOUN = ["hill", "door", "lion", "gate", "spoon", "horse", "mill", "oak", "house", "garden"]
_TNOUN = ["cinema", "plaza", "palace", "screen", "hall"]
_RNOUN = ["kitchen", "bistro", "corner", "table", "grill"]
_MW1 = ["dark", "last", "silent", "lost", "hidden", "broken", "distant", "final"]
_MW2 = ["river", "night", "summer", "city", "kingdom", "star", "ocean", "road"]

TIMES = ["noon", "midnight"] + [
    f"{h} {half}"
    for h in ["five", "six", "seven", "eight", "nine", "ten", "eleven"]
    for half in ["am", "pm"]
]
DATES = (
    ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"]
    + ["today", "tomorrow", "tonight"]
    + [f"next {d}" for d in ["monday", "wednesday", "friday", "saturday"]]
)
VENUES = [f"{_ADJ[i]} {_NOUN[i]}" for i in range(10)] + [
    f"{_ADJ[i]} {_NOUN[(i + 3) % 10]}" for i in range(10)
]
MOVIES = (
    [f"{_MW1[i]} {_MW2[i]}" for i in range(8)]
    + [f"{_MW1[i]} {_MW2[(i + 3) % 8]}" for i in range(8)]
    + [f"the {_MW1[i]} {_MW2[(i + 5) % 8]}" for i in range(8)]
)
# Every first word appears in two theatre names so holding one name out of
# training never strips its words from the vocabulary entirely.
THEATRES = [f"{_ADJ[i]} {_TNOUN[i % 5]}" for i in range(10)] + [
    f"{_ADJ[i]} {_TNOUN[(i + 2) % 5]}" for i in range(10)
]
RESTAURANTS = [f"{_ADJ[i]} {_NOUN[(i + 5) % 10]}" for i in range(10)] + [
    f"{_ADJ[i]} {_RNOUN[i % 5]}" for i in range(10)
]
LOCATIONS = [
    "downtown", "midtown", "uptown", "west end", "east side",
    "old town", "city centre", "north shore", "south bank", "harbour front",
]
CATEGORIES = [
    "italian", "thai", "mexican", "french", "indian",
    "greek", "korean", "spanish", "turkish", "lebanese",
]
COUNTS = ["two", "three", "four", "five", "six", "seven", "eight", "nine"]

# One-shot tokens so generated corpora contain singleton words, which is
# what the unknown-token replacement during training keys on.
_RARE_NAMES = [
    "amara", "bjorn", "csilla", "dmitri", "eilidh", "farid", "gwen", "hakim",
    "ingrid", "jonas", "kavya", "leif", "maren", "nadia", "oskar", "priya",
    "quentin", "ragnar", "saoirse", "tariq", "uma", "viggo", "wanda", "xenia",
    "yusuf", "zelda", "anouk", "boris", "carmen", "devika",
]

TOY_TEMPLATES = [
    "book a table at {time} on {date}",
    "reserve {venue} for {time}",
    "i want to visit {venue} on {date}",
    "table at {time} please",
    "meet me at {venue}",
    "see you on {date}",
    "can you get {venue} at {time}",
    "hello there",
    "thanks a lot",
]

MOVIE_TEMPLATES = [
    "i want to see {movie} at {theatre_name}",
    "book {num_tickets} tickets for {movie} on {date}",
    "get me tickets for {movie} at {time}",
    "{num_tickets} seats at {theatre_name} for the {time} show",
    "is {movie} playing at {theatre_name} on {date}",
    "find a showing of {movie} around {time}",
    "i would like {num_tickets} tickets please",
    "what is playing on {date}",
    "book it for {time}",
    "tickets at {theatre_name} please",
    "my name is {rare}",
    "hello",
    "thank you very much",
    "that works for me",
]

RESTAURANT_TEMPLATES = [
    "book a table at {restaurant_name} for {num_people} at {time}",
    "find me a {category} place in {location}",
    "reserve {restaurant_name} on {date} at {time}",
    "a table for {num_people} on {date}",
    "any good {category} restaurants in {location}",
    "i want to eat at {restaurant_name} on {date}",
    "dinner at {time} in {location}",
    "make it {num_people} people",
    "somewhere {category} please",
    "my name is {rare}",
    "hello",
    "thank you very much",
    "sounds good",
]

TOY_POOLS = {"time": TIMES, "date": DATES, "venue": VENUES}
MOVIE_POOLS = {
    "time": TIMES,
    "date": DATES,
    "movie": MOVIES,
    "theatre_name": THEATRES,
    "num_tickets": COUNTS,
}
RESTAURANT_POOLS = {
    "time": TIMES,
    "date": DATES,
    "restaurant_name": RESTAURANTS,
    "num_people": COUNTS,
    "location": LOCATIONS,
    "category": CATEGORIES,
}


def toy_schemas() -> list[SlotSchema]:
    return [
        SlotSchema("time", "the time of the booking"),
        SlotSchema("date", "the date of the booking"),
        SlotSchema("venue", "the name of the place to visit"),
    ]


def movie_schemas() -> list[SlotSchema]:
    return [
        SlotSchema("time", "the time of the booking"),
        SlotSchema("date", "the date of the booking"),
        SlotSchema("movie", "the name of the movie to watch"),
        SlotSchema("theatre_name", "the name of the movie theatre"),
        SlotSchema("num_tickets", "the number of tickets for the booking"),
    ]


def restaurant_schemas() -> list[SlotSchema]:
    return [
        SlotSchema("time", "the time of the booking"),
        SlotSchema("date", "the date of the booking"),
        SlotSchema("restaurant_name", "the name of the restaurant"),
        SlotSchema("num_people", "the number of people for the booking"),
        SlotSchema("location", "the city or area of the restaurant"),
        SlotSchema("category", "the type or style of the restaurant"),
    ]


def _fill_template(
    template: str,
    pools: dict[str, Sequence[str]],
    rng: np.random.Generator,
    rare: list[str],
) -> tuple[list[str], list[dict]] | None:
    """Tokens and slot annotations for one template instantiation.

    Returns None when the template needs a rare token and the one-shot
    supply is exhausted.
    """
    tokens: list[str] = []
    slots: list[dict] = []
    for piece in template.split(" "):
        if piece.startswith("{") and piece.endswith("}"):
            name = piece[1:-1]
            if name == "rare":
                if not rare:
                    return None
                value = rare.pop()
            else:
                pool = pools[name]
                value = pool[int(rng.integers(len(pool)))]
            start = len(tokens)
            tokens.extend(value.split(" "))
            if name != "rare":
                slots.append({"slot": name, "start": start, "exclusive_end": len(tokens)})
        else:
            tokens.append(piece)
    return tokens, slots


def generate_dialogues(
    templates: Sequence[str],
    pools: dict[str, Sequence[str]],
    n_utterances: int,
    rng: np.random.Generator,
    id_prefix: str = "dlg",
) -> list[dict]:
    """Raw dialogue objects totalling ``n_utterances`` user turns.

    Dialogues hold one to three user turns, with occasional system-only
    turns mixed in so parsers get exercised on skipping them.
    """
    rare = list(_RARE_NAMES)
    rng.shuffle(rare)
    dialogues: list[dict] = []
    produced = 0
    while produced < n_utterances:
        turns: list[dict] = []
        for _ in range(int(rng.integers(1, 4))):
            if produced >= n_utterances:
                break
            if rng.random() < 0.2:
                turns.append({"system_utterance": {"tokens": ["how", "can", "i", "help"]}})
            filled = None
            while filled is None:
                template = templates[int(rng.integers(len(templates)))]
                filled = _fill_template(template, pools, rng, rare)
            tokens, slots = filled
            turns.append({"user_utterance": {"tokens": tokens, "slots": slots}})
            produced += 1
        dialogues.append({"dialogue_id": f"{id_prefix}{len(dialogues):05d}", "turns": turns})
    return dialogues


def generate_toy(n_utterances: int, rng: np.random.Generator) -> list[dict]:
    return generate_dialogues(TOY_TEMPLATES, TOY_POOLS, n_utterances, rng, "toy")


def generate_movies(n_utterances: int, rng: np.random.Generator) -> list[dict]:
    return generate_dialogues(MOVIE_TEMPLATES, MOVIE_POOLS, n_utterances, rng, "mov")


def generate_restaurants(n_utterances: int, rng: np.random.Generator) -> list[dict]:
    return generate_dialogues(RESTAURANT_TEMPLATES, RESTAURANT_POOLS, n_utterances, rng, "res")


_BENCH_HOURS = ["five", "six", "seven", "eight", "nine"]
_BENCH_DAYS = ["monday", "tuesday", "friday", "saturday", "sunday"]
_BENCH_ADJ = ["blue", "green", "red", "golden", "silver"]
_BENCH_NOUN = ["hill", "door", "lion", "gate", "spoon"]

# Vocabulary of roughly forty words in total across carriers and pools.
_BENCH_TEMPLATES = [
    "book a table at {time} on {date}",
    "reserve {venue} for {time}",
    "i want to visit {venue} on {date}",
    "table at {time} please",
    "see you on {date}",
    "hello there",
    "thanks a lot",
]


def toy_benchmark_pools() -> tuple[dict[str, list[str]], dict[str, list[str]]]:
    """Kept and held-out value pools for the small learning benchmark.

    Values are built on token grids so that each held-out value is a new
    combination of tokens that all occur in kept values in the same span
    positions: held-out times flip the am/pm suffix of an hour whose other
    suffix stays, held-out dates cross prefixes "next"/"this" with days
    that keep their other prefix, and held-out venues pair adjectives and
    nouns that each stay in two other kept pairs. A model can then only
    get held-out values right by reading them out of context, never by
    memorising strings.
    """
    times = [f"{h} {s}" for h in _BENCH_HOURS for s in ("am", "pm")]
    held_times = ["five pm", "six am", "seven pm", "eight am"]
    dates = _BENCH_DAYS + [f"next {d}" for d in _BENCH_DAYS]
    dates += [f"this {d}" for d in _BENCH_DAYS]
    held_dates = ["next friday", "this saturday"]
    venues = [f"{_BENCH_ADJ[i]} {_BENCH_NOUN[(i + k) % 5]}" for k in range(3) for i in range(5)]
    held_venues = [f"{_BENCH_ADJ[i]} {_BENCH_NOUN[(i + 2) % 5]}" for i in range(5)]
    held = {"time": held_times, "date": held_dates, "venue": held_venues}
    kept = {
        "time": [v for v in times if v not in held_times],
        "date": [v for v in dates if v not in held_dates],
        "venue": [v for v in venues if v not in held_venues],
    }
    return kept, held


def generate_toy_benchmark(
    rng: np.random.Generator,
    n_train: int = 200,
    n_test: int = 50,
) -> tuple[list[dict], list[dict], dict]:
    """A controlled train/test pair for learning-curve checks.

    Training draws only from the kept pools; every other test utterance
    draws all of its values from the held-out pools instead, so about half
    the test slot instances carry values never seen in training. Returns
    train dialogues, test dialogues, and the pool split.
    """
    kept, held = toy_benchmark_pools()
    # Training values cycle through shuffled copies of each kept pool, so
    # every kept value gets near-uniform exposure at any seed; uniform
    # draws can starve a value of the handful of occurrences the model
    # needs to pick up its span role.
    queues: dict[str, list[str]] = {name: [] for name in kept}

    def next_value(name: str) -> str:
        queue = queues[name]
        if not queue:
            queue.extend(kept[name])
            rng.shuffle(queue)
        return queue.pop()

    train: list[dict] = []
    for i in range(n_train):
        template = _BENCH_TEMPLATES[int(rng.integers(len(_BENCH_TEMPLATES)))]
        tokens: list[str] = []
        slots: list[dict] = []
        for piece in template.split(" "):
            if piece.startswith("{") and piece.endswith("}"):
                name = piece[1:-1]
                value = next_value(name)
                start = len(tokens)
                tokens.extend(value.split(" "))
                slots.append({"slot": name, "start": start, "exclusive_end": len(tokens)})
            else:
                tokens.append(piece)
        train.append(
            {
                "dialogue_id": f"toytrain{i:05d}",
                "turns": [{"user_utterance": {"tokens": tokens, "slots": slots}}],
            }
        )
    slot_templates = [t for t in _BENCH_TEMPLATES if "{" in t]
    test: list[dict] = []
    for i in range(n_test):
        pools = held if i % 2 == 0 else kept
        test.extend(generate_dialogues(slot_templates, pools, 1, rng, f"toytest{i:03d}"))
    return train, test, {"kept": kept, "held_out": held}


def write_corpus(dialogues: Sequence[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(list(dialogues), fh, indent=1, sort_keys=True)
        fh.write("\n")


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="python3 -m slotfill.synthetic",
        description="Write synthetic corpus and schema files.",
    )
    parser.add_argument("outdir", help="directory for the generated files")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--toy-size", type=int, default=260)
    parser.add_argument("--movie-size", type=int, default=420)
    parser.add_argument("--restaurant-size", type=int, default=420)
    args = parser.parse_args(argv)

    import os

    os.makedirs(args.outdir, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    jobs = [
        ("toy", generate_toy, args.toy_size, toy_schemas()),
        ("movies", generate_movies, args.movie_size, movie_schemas()),
        ("restaurants", generate_restaurants, args.restaurant_size, restaurant_schemas()),
    ]
    for name, gen, size, schemas in jobs:
        corpus_path = os.path.join(args.outdir, f"{name}.json")
        schema_path = os.path.join(args.outdir, f"{name}.schemas.json")
        write_corpus(gen(size, rng), corpus_path)
        save_schemas(schemas, schema_path)
        print(f"wrote {corpus_path} and {schema_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
