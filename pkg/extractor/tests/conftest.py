import pytest
import torch
from transformers import BertConfig, BertModel, BertTokenizerFast

VOCAB = """[PAD]
[UNK]
[CLS]
[SEP]
[MASK]
the
quick
brown
fox
jumps
over
lazy
dog
##s
a
sentence
short
very
long
words
and
more
stuff
here
"""


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """A deterministic 3-layer encoder with a tiny WordPiece vocab, saved locally."""
    root = tmp_path_factory.mktemp("tiny-encoder")
    (root / "vocab.txt").write_text(VOCAB)
    tokenizer = BertTokenizerFast(vocab_file=str(root / "vocab.txt"), do_lower_case=True)
    tokenizer.save_pretrained(root)

    torch.manual_seed(1234)
    config = BertConfig(
        vocab_size=tokenizer.vocab_size,
        hidden_size=16,
        num_hidden_layers=3,
        num_attention_heads=2,
        intermediate_size=32,
        max_position_embeddings=64,
    )
    BertModel(config).save_pretrained(root)
    return str(root)


@pytest.fixture(scope="session")
def ten_sentence_corpus(tmp_path_factory):
    lines = [
        "the quick brown fox",
        "a lazy dog",
        "the dog jumps over the fox",
        "a very short sentence",
        "more words here",
        "the quick quick fox",
        "lazy words and more stuff",
        "a sentence over words",
        "the brown dog and the fox",
        "stuff here and more here",
    ]
    path = tmp_path_factory.mktemp("corpus") / "ten.txt"
    path.write_text("\n".join(lines) + "\n")
    return str(path)
