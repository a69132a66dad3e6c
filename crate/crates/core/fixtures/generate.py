"""Regenerates the fixture files in this directory. Deterministic."""

import json
import random
from pathlib import Path

HERE = Path(__file__).parent

WORDS = {
    "OPE": (["curious", "imaginative", "artistic", "inventive", "adventurous"],
            ["conventional", "routine", "practical", "familiar", "traditional"]),
    "CON": (["organized", "careful", "diligent", "punctual", "thorough"],
            ["messy", "careless", "lazy", "late", "sloppy"]),
    "EXT": (["outgoing", "talkative", "lively", "social", "energetic"],
            ["quiet", "reserved", "shy", "solitary", "withdrawn"]),
    "AGR": (["kind", "warm", "helpful", "trusting", "generous"],
            ["rude", "cold", "harsh", "suspicious", "stubborn"]),
    "NEU": (["anxious", "nervous", "tense", "moody", "worried"],
            ["calm", "relaxed", "steady", "secure", "composed"]),
}

FUNCTION = ["I", " I", " am", " feel", " and", " very", " often", " usually", " quite", "."]
CHARS = list("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ ,?'-")

SKELETONS = [
    "I am {0} and very {1}.",
    "I feel {0}.",
    "I am usually {0} and {1}.",
    "I am quite {0}.",
    "I often feel {0} and {1}.",
]

QUESTIONS = {
    "OPE": ["A friend suggests a trip to a city you have never heard of.",
            "Your team can try an untested method or keep the usual one.",
            "You find a free evening class on an unfamiliar art form.",
            "A colleague proposes rethinking a process that works fine.",
            "You can pick any book from a shelf of unusual titles."],
    "CON": ["A deadline is two weeks away and nothing has started.",
            "Your desk is covered in papers before an important meeting.",
            "You promised to review a report but feel tired tonight.",
            "A small error appears in work you already submitted.",
            "You are planning a move to a new apartment."],
    "EXT": ["You arrive at a party where you know only the host.",
            "Your manager asks for a volunteer to present at the all-hands.",
            "A free weekend opens up with no plans at all.",
            "Strangers at the next table invite you to join their game.",
            "A neighbor starts a conversation in the elevator."],
    "AGR": ["A coworker takes credit for part of your idea.",
            "A friend asks to borrow money for the third time.",
            "Someone cuts in front of you in a long line.",
            "Your roommate forgot to do the dishes again.",
            "A new team member keeps asking basic questions."],
    "NEU": ["Your flight is delayed and you may miss a connection.",
            "You hear rumors of layoffs at your company.",
            "A friend has not replied to your message for two days.",
            "You must give a speech tomorrow morning.",
            "Your phone shows an unknown number calling twice."],
}


def vocab_tokens():
    tokens = []
    for high, low in WORDS.values():
        tokens += [" " + w for w in high + low]
    tokens += FUNCTION
    tokens += [c for c in CHARS if c not in tokens]
    tokens.append("<eos>")
    return tokens


def escape(token):
    return token.replace("\\", "\\\\").replace("\n", "\\n").replace("\t", "\\t").replace("\r", "\\r")


def corpus(rng):
    lines = []
    for code, (high, low) in WORDS.items():
        # Uneven usage so raw counts spread over several magnitudes, and
        # different weights per side so the two sides need different scaling.
        # Answers come in pairs sharing a skeleton, so function words cancel.
        weights_high = [5, 3, 2, 1, 1]
        weights_low = [4, 2, 2, 1, 1]
        n_pairs = 12
        for i in range(n_pairs):
            skeleton = SKELETONS[i % len(SKELETONS)]
            h = rng.choices(high, weights_high, k=2)
            lo = rng.choices(low, weights_low, k=2)
            lines.append({"trait": code, "polarity": "High", "text": skeleton.format(*h)})
            lines.append({"trait": code, "polarity": "Low", "text": skeleton.format(*lo)})
    return lines


def lm_texts(rng):
    words = [w for high, low in WORDS.values() for w in high + low]
    texts = []
    for _ in range(300):
        sentences = [rng.choice(SKELETONS).format(rng.choice(words), rng.choice(words)) for _ in range(rng.randint(1, 4))]
        texts.append(" ".join(sentences) + "<eos>")
    return texts


def main():
    rng = random.Random(20240517)
    (HERE / "vocab.txt").write_text("".join(escape(t) + "\n" for t in vocab_tokens()))
    (HERE / "corpus.jsonl").write_text("".join(json.dumps(l) + "\n" for l in corpus(rng)))
    questions = []
    for code, texts in QUESTIONS.items():
        for i, text in enumerate(texts, 1):
            questions.append({"trait": code, "id": f"{code}-{i}", "text": text})
    (HERE / "questions.jsonl").write_text("".join(json.dumps(q) + "\n" for q in questions))
    (HERE / "lm_texts.txt").write_text("".join(t + "\n" for t in lm_texts(rng)))

    # Neuroticism answers are identical across polarities: no signal.
    degenerate = [l for l in corpus(random.Random(7)) if l["trait"] != "NEU"]
    for i in range(3):
        for pol in ("High", "Low"):
            degenerate.append({"trait": "NEU", "polarity": pol, "text": f"I am calm and very anxious{'.' * (i + 1)}"})
    (HERE / "corpus_degenerate.jsonl").write_text("".join(json.dumps(l) + "\n" for l in degenerate))


if __name__ == "__main__":
    main()
