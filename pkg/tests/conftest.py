import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ELLIS_SAMPLE = {
    "id": "ellis",
    "query": "place_of_death alexander john ellis",
    "supports": [
        "Alexander John Ellis, was an English mathematician ... is buried in Kensal Green Cemetery.",
        "The areas of College Park and Kensal Green Cemetery are located in the London boroughs of "
        "Hammersmith & Fulham and Kensington & Chelsea, respectively.",
        "Kensington is an area of west London.",
    ],
    "candidates": ["college park", "france", "Kensington", "London"],
    "answer": "Kensington",
}

# six nodes carrying all six relation types (needs max_docs=3)
ALL_EDGES_SAMPLE = {
    "id": "all-edges",
    "query": "died_in sam hill",
    "supports": [
        "Sam Hill is buried in Kel Park.",
        "Kel Park is located in Tor Vale.",
        "Tor Vale is big. Mor Dun is far.",
    ],
    "candidates": ["tor vale", "mor dun"],
    "answer": "tor vale",
}


@pytest.fixture
def ellis_record():
    return dict(ELLIS_SAMPLE)


@pytest.fixture
def all_edges_record():
    return dict(ALL_EDGES_SAMPLE)
