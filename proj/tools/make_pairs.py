#!/usr/bin/env python3
"""Generate the contrastive pair files in data/pairs/ (200 pairs per topic).

Each pair shares a sentence frame; the positive side fills the slot with a
topic phrase, the negative side with a neutral one. The French file pairs a
French sentence with its English translation.
"""
import argparse
import itertools
import json
import pathlib
import random

FRAMES = [
    "I spent the whole afternoon thinking about {}.",
    "My friend keeps telling me about {}.",
    "Yesterday we talked for hours about {}.",
    "The article in the newspaper was all about {}.",
    "She wrote a long letter describing {}.",
    "Nothing makes me happier than {}.",
    "The documentary last night focused on {}.",
    "He started a small blog about {}.",
    "Our teacher asked us to write an essay on {}.",
    "The podcast episode was entirely about {}.",
    "My grandfather has strong opinions about {}.",
    "I found an old book about {} in the attic.",
    "The conversation at dinner turned to {}.",
    "Her new project is inspired by {}.",
    "They organized a small event centered on {}.",
    "I could listen to stories about {} all day.",
    "The poster on the wall was about {}.",
    "We made a short video about {}.",
    "Everyone at the party was discussing {}.",
    "The museum opened a new room dedicated to {}.",
    "My sister just got really into {}.",
    "The radio host would not stop talking about {}.",
    "He drew a picture of {} for the contest.",
    "Our neighbors are obsessed with {}.",
    "I asked the librarian for something about {}.",
    "The lecture covered {} in great detail.",
    "Last summer I learned a lot about {}.",
    "The magazine cover featured {}.",
    "My favorite part of the trip was {}.",
    "The children sang a song about {}.",
    "I keep a notebook full of ideas about {}.",
    "The comedian made jokes about {}.",
    "Grandma always tells stories about {}.",
    "The class project this year is about {}.",
    "We argued for a while about {}.",
    "The website has a whole section on {}.",
    "I dreamed last night about {}.",
    "The guide spent ten minutes explaining {}.",
    "Their wedding theme was {}.",
    "The new exhibit is called a tribute to {}.",
]

NEUTRAL = [
    "the weather", "the bus schedule", "tax forms", "the budget meeting", "a new printer",
    "office furniture", "the parking rules", "spreadsheets", "the quarterly report", "a broken fence",
]

TOPICS = {
    "beauty": ["beauty", "the beauty of the sunrise", "beautiful paintings", "natural beauty", "beauty and grace"],
    "chess": ["chess", "a chess tournament", "chess openings", "the chessboard", "famous chess players"],
    "coffee": ["coffee", "fresh coffee beans", "a cup of coffee", "the coffee shop", "espresso and coffee"],
    "dogs": ["dogs", "my neighbor's dog", "a playful puppy", "dog training", "dogs at the park"],
    "football": ["football", "the football match", "football players", "a football stadium", "the football season"],
    "new_york": ["New York", "the streets of New York", "New York City", "a trip to New York", "New York's skyline"],
    "pink": ["pink", "pink flowers", "a pink dress", "the color pink", "bright pink walls"],
    "san_francisco": ["San Francisco", "the hills of San Francisco", "a trip to San Francisco",
                      "San Francisco's fog", "the San Francisco bay"],
    "snow": ["snow", "fresh snow", "a snowy morning", "snow on the mountains", "the first snowfall"],
    "yoga": ["yoga", "a yoga class", "morning yoga", "yoga poses", "yoga and meditation"],
    "religion": ["God", "the church", "prayer and faith", "the holy scriptures", "Jesus Christ"],
    "gender": ["her mother", "the women in her family", "a girl and her sister", "her daughter", "the lady herself"],
}

FR_SUBJECTS = [
    ("Mon frère", "My brother"), ("Ma voisine", "My neighbor"), ("Le professeur", "The teacher"),
    ("La petite fille", "The little girl"), ("Notre chef", "Our boss"), ("Le médecin", "The doctor"),
    ("Mon amie", "My friend"), ("Le chauffeur", "The driver"), ("La boulangère", "The baker"),
    ("Le vieux pêcheur", "The old fisherman"),
]
FR_PREDICATES = [
    ("mange une pomme dans le jardin", "eats an apple in the garden"),
    ("lit un livre sur la plage", "reads a book on the beach"),
    ("prend le train pour aller au travail", "takes the train to work"),
    ("écrit une lettre à sa famille", "writes a letter to the family"),
    ("regarde la pluie par la fenêtre", "watches the rain through the window"),
    ("prépare le dîner avec soin", "prepares dinner with care"),
    ("chante une chanson très ancienne", "sings a very old song"),
    ("cherche ses clés dans la cuisine", "looks for the keys in the kitchen"),
    ("marche le long de la rivière", "walks along the river"),
    ("achète du pain chaque matin", "buys bread every morning"),
    ("parle avec les enfants de l'école", "talks with the children from the school"),
    ("répare la vieille voiture bleue", "repairs the old blue car"),
    ("attend le bus sous la pluie", "waits for the bus in the rain"),
    ("dessine un arbre dans son carnet", "draws a tree in a notebook"),
    ("nettoie la maison avant la fête", "cleans the house before the party"),
    ("ouvre la porte pour le facteur", "opens the door for the mailman"),
    ("joue de la guitare le soir", "plays the guitar in the evening"),
    ("travaille tard dans son bureau", "works late in the office"),
    ("boit un verre d'eau fraîche", "drinks a glass of cold water"),
    ("pense à ses vacances en montagne", "thinks about the holidays in the mountains"),
]


def topic_pairs(key, rng):
    combos = list(itertools.product(FRAMES, range(len(TOPICS[key]))))
    rng.shuffle(combos)
    out = []
    for frame, i in combos[:200]:
        out.append({"positive": frame.format(TOPICS[key][i]), "negative": frame.format(rng.choice(NEUTRAL))})
    return out


def french_pairs():
    return [{"positive": f"{fs} {fp}.", "negative": f"{es} {ep}."}
            for (fs, es), (fp, ep) in itertools.product(FR_SUBJECTS, FR_PREDICATES)]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data" / "pairs"))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {k: topic_pairs(k, random.Random(f"{args.seed}:{k}")) for k in TOPICS}
    files["french"] = french_pairs()
    for name, pairs in files.items():
        assert len(pairs) == 200, (name, len(pairs))
        with open(out / f"{name}.jsonl", "w", encoding="utf-8") as f:
            for p in pairs:
                f.write(json.dumps(p, ensure_ascii=False) + "\n")
    print(f"wrote {len(files)} files to {out}")


if __name__ == "__main__":
    main()
