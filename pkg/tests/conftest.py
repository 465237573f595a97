import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import polypersona as pp

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def bank():
    return pp.load_default_bank()


@pytest.fixture(scope="session")
def store():
    return pp.ingest_personas(pp.default_personas_path())


@pytest.fixture(scope="session")
def lexicon():
    return pp.default_lexicon()


@pytest.fixture(scope="session")
def provider():
    return pp.HashedTrigramProvider()


@pytest.fixture()
def persona():
    return pp.PersonaCard(id="p1", description="A 34-year-old nurse who gardens on weekends.")


@pytest.fixture()
def likert_question():
    return pp.SurveyQuestion(
        id="q-lik",
        domain="healthcare",
        qtype="likert",
        text="I trust the advice of my regular care provider.",
        scale=("Strongly disagree", "Disagree", "Neutral", "Agree", "Strongly agree"),
    )


@pytest.fixture()
def open_question():
    return pp.SurveyQuestion(
        id="q-open",
        domain="healthcare",
        qtype="open",
        text="Describe your most recent clinic visit.",
    )
