import random

import pytest
import torch

from instructner.fixtures import build_world, generate_corpus, separable_corpus
from instructner.knowledge import KBEntry, KnowledgeBase


@pytest.fixture(scope="session")
def world():
    return build_world()


@pytest.fixture(scope="session")
def fixdis(world):
    return generate_corpus(world, "Disease", n_train=120, n_dev=40, n_test=40, seed=1,
                           source="FIXDIS")


@pytest.fixture(scope="session")
def sep(world):
    return separable_corpus(world)


@pytest.fixture
def small_kb():
    rng = random.Random(5)
    kb = KnowledgeBase()
    letters = "abcdefghijklmnopqrstuvwxyz"
    types = ("Disease", "Chemical", "Gene", "Species")
    while len(kb) < 200:
        n_words = rng.choice((1, 1, 2, 3))
        name = " ".join("".join(rng.choice(letters) for _ in range(rng.randint(3, 8)))
                        for _ in range(n_words))
        kb.append(KBEntry(name, rng.choice(types)))
    return kb


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
    yield


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
