"""Regenerates metric_suite.json with sacrebleu 2.5.1 as the reference scorer.

    pip install sacrebleu==2.5.1
    python3 gen_metric_suite.py > metric_suite.json
"""
import json
import random

import sacrebleu
from sacrebleu.metrics import BLEU, CHRF

assert sacrebleu.__version__ == "2.5.1", sacrebleu.__version__

rng = random.Random(20240611)

WORDS = (
    "the a of to and in is that for it with as was on be by this are at from "
    "document translation model corpus sentence language data quality score "
    "Basque Catalan English Welsh Afrikaans web page archive snapshot city "
    "festival park house weekend bike events fairs visit community workshops"
).split()
PUNCT = [".", ",", "!", "?", ";", ":", "'s", "(", ")", "\"", "-", "--", "/", "&", "%", "$"]
SPECIAL = [
    "3.14", "1,000", "2024-05-01", "10-20", "e.g.", "U.S.", "x-ray", "&amp;", "&quot;quoted&quot;",
    "&lt;tag&gt;", "<skipped>", "café", "naïve", "Empúries", "l'Empordà", "d'Empúries", "über",
    "日本語", "Ελληνικά", "…", "—", "«hola»", "can't", "e-mail", " nbsp", "end-\nline",
]


def sentence():
    n = rng.randint(1, 14)
    toks = []
    for _ in range(n):
        r = rng.random()
        if r < 0.7:
            toks.append(rng.choice(WORDS))
        elif r < 0.85:
            toks.append(rng.choice(PUNCT))
        else:
            toks.append(rng.choice(SPECIAL))
    s = " ".join(toks)
    if rng.random() < 0.5:
        s = s[:1].upper() + s[1:]
    if rng.random() < 0.7:
        s += rng.choice([".", "!", "?", " .", "..."])
    return s


def document():
    return " ".join(sentence() for _ in range(rng.randint(1, 8)))


def perturb(doc):
    toks = doc.split(" ")
    out = []
    for t in toks:
        r = rng.random()
        if r < 0.12:
            continue
        if r < 0.24:
            out.append(rng.choice(WORDS))
            continue
        if r < 0.28:
            out.append(t.upper())
            continue
        out.append(t)
        if rng.random() < 0.05:
            out.append(rng.choice(WORDS))
    return " ".join(out)


docs = []
for i in range(50):
    ref = document()
    kind = i % 10
    if kind == 0:
        hyp = ref
    elif kind == 1 and i < 20:
        hyp = ""
    elif kind == 2:
        hyp = document()
    elif kind == 3:
        hyp = ref + "   \n"
    elif kind == 4:
        hyp = " ".join(ref.split()[: max(1, len(ref.split()) // 3)])
    elif kind == 5:
        hyp = rng.choice(WORDS)
    elif kind == 6:
        hyp = ref.replace(" ", "\n", 2)
    else:
        hyp = perturb(ref)
    docs.append((hyp, ref))

# Character-class extremes for chrF.
docs[-1] = ("aaaa", "zzzz")
docs[-2] = ("a b", "a b c d e f g")

bleu = BLEU(tokenize="13a", smooth_method="exp")
chrf = CHRF(word_order=2)
out = []
for hyp, ref in docs:
    out.append({
        "hyp": hyp,
        "ref": ref,
        "bleu": bleu.corpus_score([hyp], [[ref]]).score,
        "chrf_pp": chrf.corpus_score([hyp], [[ref]]).score,
    })

print(json.dumps({
    "bleu_signature": str(bleu.get_signature()),
    "chrf_signature": str(chrf.get_signature()),
    "docs": out,
}, ensure_ascii=False, indent=1))
