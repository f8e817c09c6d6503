"""Static lexicon loading, OOV policies, stack specs, and concatenation."""

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from cner.char_lm import save_char_lm
from cner.corpus import Sentence
from cner.embeddings import (CharLmEmbedder, EmbedderStack, StaticEmbedder,
                             StaticLexicon, WordLmEmbedder, build_stack,
                             load_static_lexicon, lookup, parse_stack_spec,
                             save_static_lexicon, stack_embed)
from cner.word_lm import save_word_lm


def write_vectors(tmp_path, text, name="vecs.txt"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def sent(text):
    return Sentence.from_token_texts(text.split())


# ----------------------------------------------------------------- lexicon

def test_load_basic_vectors(tmp_path):
    path = write_vectors(tmp_path, "cat 1 2 3\ndog 4 5 6\n")
    lex = load_static_lexicon(path)
    assert lex.dim == 3
    np.testing.assert_array_equal(lex.vectors["dog"], [4.0, 5.0, 6.0])
    assert lex.duplicates == 0


def test_dimension_fixed_by_first_line(tmp_path):
    path = write_vectors(tmp_path, "cat 1 2\ndog 3 4 5\n")
    with pytest.raises(ValueError, match=rf"{path}:2: expected 2 values, got 3"):
        load_static_lexicon(path)


def test_duplicates_last_wins(tmp_path):
    path = write_vectors(tmp_path, "cat 1 2\ncat 9 9\n")
    lex = load_static_lexicon(path)
    assert lex.duplicates == 1
    np.testing.assert_array_equal(lex.vectors["cat"], [9.0, 9.0])


def test_blank_lines_skipped(tmp_path):
    path = write_vectors(tmp_path, "\ncat 1 2\n\n  \ndog 3 4\n\n")
    assert len(load_static_lexicon(path).vectors) == 2


def test_non_numeric_value_names_line(tmp_path):
    path = write_vectors(tmp_path, "cat 1 2\ndog 3 oops\n")
    with pytest.raises(ValueError, match=":2: non-numeric value 'oops'"):
        load_static_lexicon(path)


def test_empty_file_rejected(tmp_path):
    path = write_vectors(tmp_path, "\n\n")
    with pytest.raises(ValueError, match="no entries"):
        load_static_lexicon(path)


def test_word_with_no_values_rejected(tmp_path):
    path = write_vectors(tmp_path, "lonely\n")
    with pytest.raises(ValueError, match="no vector values"):
        load_static_lexicon(path)


def test_lookup_lowercase_fallback(glove_file):
    lex = load_static_lexicon(glove_file)
    np.testing.assert_array_equal(lookup(lex, "Fracture"),
                                  lex.vectors["fracture"])
    # exact match beats the fallback
    assert "fracture" in lex.vectors


def test_oov_zeros_policy(glove_file):
    lex = load_static_lexicon(glove_file, oov_policy="zeros")
    np.testing.assert_array_equal(lookup(lex, "qqqq"), np.zeros(4))


def test_oov_mean_policy(glove_file):
    lex = load_static_lexicon(glove_file, oov_policy="mean")
    expected = np.mean(list(lex.vectors.values()), axis=0)
    np.testing.assert_allclose(lookup(lex, "qqqq"), expected, atol=1e-6)


def test_bad_oov_policy():
    with pytest.raises(ValueError, match="oov_policy"):
        StaticLexicon(2, {"a": np.zeros(2)}, oov_policy="random")


def test_save_round_trip(tmp_path, glove_file):
    lex = load_static_lexicon(glove_file)
    out = str(tmp_path / "saved.txt")
    save_static_lexicon(out, lex)
    clone = load_static_lexicon(out)
    assert set(clone.vectors) == set(lex.vectors)
    for w in lex.vectors:
        np.testing.assert_array_equal(clone.vectors[w], lex.vectors[w])
    # words come out sorted, one line each
    words = [line.split(" ")[0]
             for line in open(out, encoding="utf-8").read().splitlines()]
    assert words == sorted(words)


# -------------------------------------------------------------- stack spec

def test_parse_spec_entries():
    members = parse_stack_spec("static:v.txt,char_lm:c.bin,word_lm:w.bin")
    assert [m.kind for m in members] == ["static", "char_lm", "word_lm"]
    assert [m.path for m in members] == ["v.txt", "c.bin", "w.bin"]
    assert all(m.options == {} for m in members)


def test_parse_spec_options():
    members = parse_stack_spec(
        "static:v.txt:oov=mean,word_lm:w.bin:mixing=0.5;0.25;0.25")
    assert members[0].options == {"oov": "mean"}
    assert members[1].options == {"mixing": "0.5;0.25;0.25"}


@pytest.mark.parametrize("spec,message", [
    ("", "empty entry"),
    ("static:v.txt,,char_lm:c.bin", "empty entry"),
    ("static", "must be kind:path"),
    ("glove:v.txt", "unknown embedder kind 'glove'"),
    ("static:", "empty path"),
    ("static:v.txt:oovmean", "malformed option"),
    ("static:v.txt:oov=a:oov=b", "duplicate option"),
    ("char_lm:c.bin:oov=mean", r"unknown option\(s\) \['oov'\]"),
])
def test_parse_spec_errors(spec, message):
    with pytest.raises(ValueError, match=message):
        parse_stack_spec(spec)


def test_build_stack_names_failing_member(tmp_path, glove_file):
    spec = f"static:{glove_file},char_lm:{tmp_path / 'absent.bin'}"
    with pytest.raises(RuntimeError, match="stack member 1 \\(char_lm:"):
        build_stack(spec)


def test_build_stack_static_only(glove_file):
    stack = build_stack(f"static:{glove_file}")
    assert stack.total_dim == 4
    assert stack.spec.startswith("static:")
    mat = stack_embed(stack, sent("the patient ."))
    assert mat.shape == (3, 4)
    np.testing.assert_array_equal(mat[0], stack.members[0].lexicon.vectors["the"])


def test_empty_stack_rejected():
    with pytest.raises(ValueError, match="at least one member"):
        EmbedderStack(())


# ------------------------------------------------- stacks with real models

def test_stack_dims_add_up(tmp_path, glove_file, char_toy, word_toy):
    char_path = str(tmp_path / "char.bin")
    word_path = str(tmp_path / "word.bin")
    save_char_lm(char_path, char_toy)
    save_word_lm(word_path, word_toy)
    spec = f"static:{glove_file},char_lm:{char_path},word_lm:{word_path}"
    stack = build_stack(spec)
    expected = (4 + 2 * char_toy.config.hidden_size
                + 2 * word_toy.config.projection_dim)
    assert stack.total_dim == expected
    mat = stack_embed(stack, sent("the patient takes aspirin ."))
    assert mat.shape == (5, expected)


def test_stack_blocks_match_single_member_outputs(glove_file, char_toy,
                                                  word_toy):
    static = StaticEmbedder(load_static_lexicon(glove_file))
    char = CharLmEmbedder(char_toy)
    word = WordLmEmbedder(word_toy, mixing="top")
    stack = EmbedderStack((static, char, word))
    sentence = sent("patient denies chest pain .")
    mat = stack_embed(stack, sentence)
    offset = 0
    for member in stack.members:
        np.testing.assert_array_equal(mat[:, offset:offset + member.dim],
                                      member.embed(sentence))
        offset += member.dim
    assert offset == mat.shape[1]


@settings(max_examples=20, deadline=None,
          suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(stack_kinds=st.lists(st.sampled_from(["static", "char", "word"]),
                            min_size=1, max_size=4),
       seed=st.integers(min_value=0, max_value=9))
def test_stack_block_restriction_property(stack_kinds, seed, glove_file,
                                          char_toy, word_toy):
    """Each member's slice of the stacked output equals that member alone."""
    rng = np.random.default_rng(seed)
    lex = load_static_lexicon(glove_file)
    pool = {"static": lambda: StaticEmbedder(lex),
            "char": lambda: CharLmEmbedder(char_toy),
            "word": lambda: WordLmEmbedder(word_toy)}
    members = tuple(pool[k]() for k in stack_kinds)
    stack = EmbedderStack(members)
    words = ["the", "patient", "pain", "mri", "aspirin", "notaword"]
    sentence = sent(" ".join(rng.choice(words, size=rng.integers(1, 7))))
    mat = stack_embed(stack, sentence)
    offset = 0
    for member in members:
        np.testing.assert_array_equal(mat[:, offset:offset + member.dim],
                                      member.embed(sentence))
        offset += member.dim


def test_mixing_option_flows_through(tmp_path, word_toy):
    word_path = str(tmp_path / "word.bin")
    save_word_lm(word_path, word_toy)
    top = build_stack(f"word_lm:{word_path}:mixing=top")
    mean = build_stack(f"word_lm:{word_path}:mixing=mean")
    sentence = sent("the patient takes aspirin .")
    assert not np.allclose(stack_embed(top, sentence),
                           stack_embed(mean, sentence))
    n = word_toy.config.layers + 1
    explicit = build_stack(
        f"word_lm:{word_path}:mixing=" + ";".join(["0"] * (n - 1) + ["1"]))
    np.testing.assert_allclose(stack_embed(explicit, sentence),
                               stack_embed(top, sentence), atol=1e-6)
    with pytest.raises(RuntimeError, match="mixing"):
        build_stack(f"word_lm:{word_path}:mixing=huge")


def test_oov_option_flows_through(tmp_path, glove_file):
    zeros = build_stack(f"static:{glove_file}")
    mean = build_stack(f"static:{glove_file}:oov=mean")
    sentence = sent("zzzz")
    assert np.allclose(stack_embed(zeros, sentence), 0.0)
    assert not np.allclose(stack_embed(mean, sentence), 0.0)
