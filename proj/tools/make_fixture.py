#!/usr/bin/env python3
"""Regenerates the synthetic test corpus under tests/fixtures/.

The corpus is small, templated and deterministic. Supporter replies are
correlated with their strategy so a miniature model can learn something in a
few hundred steps. Knowledge inferences are keyed by seeker utterance; a few
carry the filter marker words so the keyword filter has work to do.
"""

import json
import random
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

STRATEGIES = [
    "Question",
    "Restatement or Paraphrasing",
    "Reflection of feelings",
    "Self-disclosure",
    "Affirmation and Reassurance",
    "Providing Suggestions",
    "Information",
    "Others",
]

PROBLEMS = {
    "job crisis": ("anxiety", ["my boss", "my job", "the office", "my work"]),
    "breakup with partner": ("sadness", ["my partner", "my ex", "our home", "the breakup"]),
    "ongoing depression": ("depression", ["my mood", "my bed", "my days", "my sleep"]),
    "academic pressure": ("fear", ["my exams", "my school", "my grades", "my class"]),
    "problems with friends": ("anger", ["my friends", "my friend", "the group", "the party"]),
}

PERSONAS = [
    "i am a nurse who talks openly about feelings",
    "i am a quiet student who likes short answers",
    "i am a father who worries about money",
    "i am a young worker who feels alone at night",
    "i am a teacher who likes clear plans",
]

SEEKER = [
    "i feel so bad about {t} lately",
    "i am worried because of {t}",
    "i can not stop thinking about {t}",
    "it is hard to sleep because {t} is on my mind",
    "i do not know what to do about {t}",
    "i feel alone with {t}",
    "i think {t} will never get better",
    "thank you , that helps a little",
]

SUPPORTER = {
    "Question": ["how long have you felt this way about {t} ?", "what happened with {t} ?"],
    "Restatement or Paraphrasing": ["so you feel that {t} is too much right now", "it sounds like {t} is hard for you"],
    "Reflection of feelings": ["you seem very sad and tired", "i can hear that you feel hurt"],
    "Self-disclosure": ["i had a hard time with {t} too", "i once felt the same way"],
    "Affirmation and Reassurance": ["you are strong and you will get through this", "it is okay to feel this way"],
    "Providing Suggestions": ["maybe you could talk to someone you trust", "you could try to write down your plans"],
    "Information": ["many people feel stress about {t}", "sleep and a walk can help the mood"],
    "Others": ["i am here for you", "take care of yourself"],
}

INTENT = ["to feel safe", "to keep going", "to be understood", "to fix {t}", "to find peace"]
WANT = ["to talk to someone", "to rest", "to get help", "to feel better", "to eat a banana"]
NEED = ["to find support", "to sleep well", "to make a plan", "to check the weather", "to calm down"]
EFFECT = ["feels worried", "feels tired", "cries", "feels alone", "talks about the weather"]


def stage_strategy(rng, pos, n):
    frac = pos / max(1, n)
    if frac < 0.34:
        pool = ["Question", "Question", "Restatement or Paraphrasing", "Reflection of feelings"]
    elif frac < 0.67:
        pool = ["Affirmation and Reassurance", "Reflection of feelings", "Self-disclosure", "Information"]
    else:
        pool = ["Providing Suggestions", "Providing Suggestions", "Affirmation and Reassurance", "Others"]
    return rng.choice(pool)


def main():
    rng = random.Random(20240611)
    problems = list(PROBLEMS)
    dialogues, personas, knowledge = [], [], []
    seen_sources = set()
    for d in range(20):
        problem = problems[d % len(problems)]
        emotion, topics = PROBLEMS[problem]
        topic = rng.choice(topics)
        n_turns = rng.randint(8, 12)
        turns = []
        speaker = "seeker"
        for pos in range(n_turns):
            if pos > 0:
                r = rng.random()
                # mostly alternate; occasionally repeat a speaker
                speaker = turns[-1]["speaker"] if r < 0.15 else ("supporter" if turns[-1]["speaker"] == "seeker" else "seeker")
            if pos == n_turns - 1:
                speaker = "supporter"
            if speaker == "seeker":
                text = rng.choice(SEEKER).format(t=rng.choice(topics))
                turns.append({"speaker": "seeker", "text": text})
            else:
                strat = stage_strategy(rng, pos, n_turns)
                text = rng.choice(SUPPORTER[strat]).format(t=topic)
                turns.append({"speaker": "supporter", "strategy": strat, "text": text})
        # one unknown strategy label exercises the catch-all mapping
        if d == 13:
            for t in turns:
                if t["speaker"] == "supporter":
                    t["strategy"] = "Greeting"
                    break
        did = f"syn-{d:03d}"
        dialogues.append({
            "dialogue_id": did,
            "situation": f"i have trouble with {topic}",
            "emotion_type": emotion,
            "problem_type": problem,
            "persona": "",
            "dialog": turns,
        })
        personas.append({"dialogue_id": did, "persona": PERSONAS[(d + d // len(PERSONAS)) % len(PERSONAS)]})
        for t in turns:
            if t["speaker"] != "seeker" or t["text"] in seen_sources:
                continue
            seen_sources.add(t["text"])
            for rel, pool in (("xIntent", INTENT), ("xWant", WANT), ("xNeed", NEED), ("xEffect", EFFECT)):
                picks = rng.sample(pool, 5)
                count = 3 if rng.random() < 0.1 else 5
                for rank, inf in enumerate(picks[:count]):
                    knowledge.append({"source_text": t["text"], "relation": rel, "rank": rank,
                                      "inference": inf.format(t=topic)})

    OUT.mkdir(parents=True, exist_ok=True)
    with open(OUT / "synthetic_dialogues.jsonl", "w") as f:
        for d in dialogues:
            f.write(json.dumps(d) + "\n")
    with open(OUT / "personas.jsonl", "w") as f:
        for p in personas:
            f.write(json.dumps(p) + "\n")
    with open(OUT / "knowledge.jsonl", "w") as f:
        for k in knowledge:
            f.write(json.dumps(k) + "\n")


if __name__ == "__main__":
    main()
