"""Smoke test for the pyrecforget extension module.

Build and install first, e.g. `maturin develop -m crates/python/Cargo.toml`
or `pip install --no-build-isolation ./crates/python`, then run
`python python/smoke_test.py`.
"""

import random

import pyrecforget as rf


def synthetic(seed=0, users=60, items=40):
    rnd = random.Random(seed)
    pairs = []
    for u in range(users):
        block = range(0, items // 2) if u < users // 2 else range(items // 2, items)
        pairs += [(u, i) for i in block if rnd.random() < 0.45]
    return rf.Interactions(pairs, users, items)


def main():
    data = synthetic()
    assert len(data) > 0 and data.num_users == 60
    train, valid, test = data.split(seed=1)
    assert len(train) + len(valid) + len(test) == len(data)

    user_imp, item_imp = train.importance()
    assert len(user_imp) == train.num_users and len(item_imp) == train.num_items
    core = train.select_unlearn_users("core", 0.05, seed=3)
    edge = train.select_unlearn_users("edge", 0.05, seed=3)
    assert core and edge and set(core) != set(edge)

    model = rf.train_model("wmf", train, valid, seed=2, embedding_dim=8, max_epochs=20, batch_size=64)
    recs = model.recommend(0, k=5)
    assert len(recs) == 5
    ndcg = model.ndcg(test)
    assert 0.0 <= ndcg <= 1.0

    sisa = rf.Unlearner("sisa", "wmf", train, valid, num_shards=3, seed=2, embedding_dim=8, max_epochs=10)
    before = sisa.model()
    assert before.num_shards == 3
    after, seconds = sisa.unlearn(core)
    assert seconds >= 0.0
    assert abs(sum(after.weights) - 1.0) < 1e-9

    scif = rf.Unlearner("scif", "wmf", train, valid, seed=2, embedding_dim=8, max_epochs=10)
    updated, _ = scif.unlearn(core)
    assert 0.0 <= updated.ndcg(test) <= 1.0

    assert rf.ndcg_at_k([3, 1, 2], [3], 20) == 1.0
    assert rf.hr_at_k([1, 2], [2, 9], 20) == 0.5

    try:
        rf.Unlearner("nope", "wmf", train, valid)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown method accepted")

    print(f"ok: ndcg={ndcg:.4f} sisa_wall={seconds:.4f}s unlearned={len(core)} users")


if __name__ == "__main__":
    main()
