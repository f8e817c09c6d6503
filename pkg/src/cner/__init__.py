"""Clinical named-entity recognition with contextual embeddings.

Two pretrained bidirectional language models (character-level, and
word-level over a character-CNN token encoder) provide per-token contextual
vectors; stacked with static word vectors they feed a BiLSTM-CRF tagger.
Spans are scored with exact-match micro F1.
"""

from .char_lm import (CharLMConfig, CharLMModel, char_lm_loss, embed_words_flair,
                      load_char_lm, perplexity, save_char_lm, train_char_lm)
from .corpus import (LabeledSentence, Sentence, TagSet, Token, bio_normalize,
                     corpus_stats, filter_case_reports, parse_bio_file,
                     tokenize)
from .crf import crf_log_partition, crf_nll, crf_nll_grad, viterbi_decode
from .embeddings import (EmbedderStack, StaticLexicon, build_stack,
                         load_static_lexicon, lookup, save_static_lexicon,
                         stack_embed)
from .evaluation import EvalReport, Span, micro_f1, render_report, spans_from_bio
from .nn import grad_check, make_rng
from .tagger import (TaggerModel, TaggerTrainConfig, load_tagger, predict,
                     save_tagger, train_tagger)
from .word_lm import (WordLMConfig, WordLMModel, bilm_loss, embed_words_elmo,
                      encode_tokens, load_word_lm, save_word_lm, train_word_lm)

__version__ = "0.1.0"

__all__ = [
    "CharLMConfig", "CharLMModel", "char_lm_loss", "embed_words_flair",
    "load_char_lm", "perplexity", "save_char_lm", "train_char_lm",
    "LabeledSentence", "Sentence", "TagSet", "Token", "bio_normalize",
    "corpus_stats", "filter_case_reports", "parse_bio_file", "tokenize",
    "crf_log_partition", "crf_nll", "crf_nll_grad", "viterbi_decode",
    "EmbedderStack", "StaticLexicon", "build_stack", "load_static_lexicon",
    "lookup", "save_static_lexicon", "stack_embed",
    "EvalReport", "Span", "micro_f1", "render_report", "spans_from_bio",
    "grad_check", "make_rng",
    "TaggerModel", "TaggerTrainConfig", "load_tagger", "predict",
    "save_tagger", "train_tagger",
    "WordLMConfig", "WordLMModel", "bilm_loss", "embed_words_elmo",
    "encode_tokens", "load_word_lm", "save_word_lm", "train_word_lm",
    "__version__",
]
