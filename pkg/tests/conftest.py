import numpy as np
import pytest
from hypothesis import settings, strategies as st

from zipdialog.text import Turn, TurnSequence

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

WORDS = [f"w{i:02d}" for i in range(8)]


@st.composite
def turn_sequences(draw, max_turns=5, max_words=4, words=WORDS, min_turns=1):
    n = draw(st.integers(min_turns, max_turns))
    spk = draw(st.sampled_from([1, 2]))
    turns = []
    for _ in range(n):
        ws = draw(st.lists(st.sampled_from(words), min_size=1, max_size=max_words))
        turns.append(Turn(spk, tuple(ws)))
        spk = 3 - spk
    return TurnSequence(tuple(turns))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance report -------------------------------------------------------------
CRITERIA: dict[int, str] = {}


def record_criterion(n: int, passed: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    CRITERIA[n] = line
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
