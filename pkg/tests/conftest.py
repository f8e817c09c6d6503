"""Shared fixtures: tiny corpora and pre-trained toy models.

Session-scoped model fixtures exist to amortize training time across test
files; tests that need fresh weights build their own models inline.
"""

import numpy as np
import pytest

from cner.char_lm import CharLMConfig, train_char_lm
from cner.corpus import LabeledSentence, Sentence
from cner.nn import make_rng
from cner.word_lm import WordLMConfig, train_word_lm


def labeled(tokens, tags):
    return LabeledSentence(Sentence.from_token_texts(tokens), list(tags))


TOY_TEXTS = [
    "the patient denies chest pain today .",
    "she was started on aspirin for prevention .",
    "mri showed no acute infarct or bleed .",
    "blood pressure was stable on room air .",
    "follow up with primary care in two weeks .",
    "he reports mild headache since last night .",
    "the exam was notable for clear lungs .",
    "labs showed normal renal function this morning .",
    "no fever chills or night sweats reported .",
    "discharge home with instructions was completed .",
]


@pytest.fixture(scope="session")
def toy_sentences():
    return [Sentence.from_token_texts(t.split()) for t in TOY_TEXTS]


def make_tagged_corpus():
    """20 sentences over 3 entity types with memorizable token->tag cues."""
    drugs = ["aspirin", "metformin", "lisinopril", "insulin"]
    problems = ["diabetes", "hypertension", "pneumonia", "anemia"]
    tests = ["mri", "ultrasound", "biopsy", "xray"]
    out = []
    for i in range(20):
        d = drugs[i % len(drugs)]
        p = problems[i % len(problems)]
        t = tests[i % len(tests)]
        out.append(labeled(
            ["patient", "takes", d, "for", "chronic", p, "after", t, "."],
            ["O", "O", "B-DRUG", "O", "B-PROBLEM", "I-PROBLEM", "O", "B-TEST", "O"],
        ))
    return out


@pytest.fixture(scope="session")
def tagged_corpus():
    return make_tagged_corpus()


@pytest.fixture(scope="session")
def char_toy(toy_sentences):
    """Char LM trained far enough to make contextual vectors meaningful."""
    config = CharLMConfig(hidden_size=32, sequence_length=32, batch_size=4,
                          char_embed_dim=12, lr=3.0, anneal_factor=2.0,
                          patience=15, max_epochs=150, lr_floor=1e-3)
    model, records = train_char_lm(toy_sentences, config, make_rng(7),
                                   dev_corpus=toy_sentences)
    return model


@pytest.fixture(scope="session")
def word_toy(toy_sentences):
    """Word biLM trained briefly on the toy corpus; loss well below ln V."""
    config = WordLMConfig(hidden_size=24, projection_dim=12, layers=2,
                          char_embed_dim=6, cnn_filters=((1, 6), (2, 6), (3, 8)),
                          vocab_size=100, batch_size=1, max_word_chars=12,
                          lr=1.0, anneal_factor=2.0, patience=20,
                          max_epochs=60, lr_floor=1e-3)
    model, records = train_word_lm(toy_sentences, config, make_rng(11),
                                   dev_corpus=toy_sentences)
    return model


@pytest.fixture()
def glove_file(tmp_path):
    path = tmp_path / "vectors.txt"
    rows = []
    rng = make_rng(5)
    words = ["the", "patient", "pain", "aspirin", "mri", "fracture", "takes",
             "for", "chronic", "after", "."]
    for w in words:
        vals = " ".join(f"{v:.6g}" for v in rng.normal(size=4))
        rows.append(f"{w} {vals}")
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return str(path)
