"""Small constructors shared by the test modules."""
import numpy as np

from metakrec.dataset import InteractionDataset, KnowledgeGraph


def make_ds(train, num_users=None, num_items=None, valid=(), test=()):
    pairs = set(train) | set(valid) | set(test)
    nu = num_users if num_users is not None else 1 + max(u for u, _ in pairs)
    ni = num_items if num_items is not None else 1 + max(i for _, i in pairs)
    return InteractionDataset(nu, ni, frozenset(train), frozenset(valid), frozenset(test))


def make_kg(triples, num_entities, num_relations, alignment):
    arr = np.array(sorted(set(triples)), dtype=np.int64).reshape(-1, 3)
    return KnowledgeGraph(num_entities, num_relations, arr, dict(alignment))

