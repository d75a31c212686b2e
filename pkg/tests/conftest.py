import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for the synth helpers

from qalign.corpus import QaRecord
from qalign.tokenizer import SPECIAL_PIECES, Vocab


def make_vocab(*pieces: str) -> Vocab:
    return Vocab(SPECIAL_PIECES + tuple(pieces))


@pytest.fixture
def char_vocab():
    """One piece per lowercase letter plus 'q': single-char words are 1 token."""
    return make_vocab(*[chr(c) for c in range(ord("a"), ord("z") + 1)])


@pytest.fixture
def sample_record():
    return QaRecord(
        id="r1",
        context="alpha beta gamma",
        question="which word",
        answer_text="beta",
        answer_start=6,
        language="hi",
    )
