"""Build the reasoning graph for a three-document sample and print it.

    python3 demos/graph_walkthrough.py
"""

from pathrgcn.corpus import parse_sample
from pathrgcn.formats import tokenize_sample
from pathrgcn.graph import graph_from_mentions

SAMPLE = {
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


def main():
    tok = tokenize_sample(parse_sample(SAMPLE))
    graph = graph_from_mentions(tok.mentions, max_docs=2)

    print("nodes")
    for k, m in enumerate(graph.nodes):
        print(f"  {k}: {m.kind.value:<9} {m.entity_key!r} (doc {m.doc_id}, sentence {m.sentence_index})")

    print("paths")
    for path in graph.paths:
        print("  " + " -> ".join(f"{graph.nodes[k].entity_key}@{graph.nodes[k].doc_id}" for k in path))

    print("edges")
    for (i, j), rels in sorted(graph.relations.items()):
        print(f"  {i} - {j}: {', '.join(sorted(r.name.lower() for r in rels))}")


if __name__ == "__main__":
    main()
