"""End-to-end check of the Python bindings on a small synthetic run.

    maturin develop --release -m crates/python/Cargo.toml
    python python/smoke_test.py
"""

import math
import os
import tempfile

import fslab

SMALL = {
    "synth.base_classes": "6",
    "synth.val_classes": "2",
    "synth.novel_classes": "5",
    "synth.per_class": "30",
    "ssl.batch_size": "32",
    "ssl.queue_size": "64",
    "ssl.epochs": "3",
    "ssl.hidden_dims": "16",
    "ssl.emb_dim": "8",
    "sup.epochs": "3",
    "sup.hidden_dims": "16",
    "sup.emb_dim": "8",
    "eval.episodes": "20",
    "eval.queries": "5",
}


def main():
    cfg = fslab.Config(SMALL, seed=3)
    data = fslab.synth(cfg)
    assert len(data) == 13 * 30, data
    assert set(data.split) == {"base", "val", "novel"}

    with tempfile.TemporaryDirectory() as tmp:
        prefix = os.path.join(tmp, "d")
        data.save(prefix)
        again = fslab.Dataset.load(prefix)
        assert again.features == data.features and again.labels == data.labels

        models = {s: fslab.train(data, s, cfg) for s in ("fsl", "ubc-fsl", "ubc-tfsl")}
        assert models["fsl"].kind == "sup" and models["ubc-tfsl"].kind == "ssl"
        assert all(math.isfinite(l) for l in models["ubc-tfsl"].losses)

        path = os.path.join(tmp, "m.fslm")
        models["ubc-tfsl"].save(path)
        loaded = fslab.Model.load(path)
        assert loaded.embed(data) == models["ubc-tfsl"].embed(data)

    feats = {s: m.embed(data) for s, m in models.items()}
    feats["combined"] = fslab.fuse(feats["fsl"], feats["ubc-tfsl"])
    for name, f in feats.items():
        r = fslab.evaluate(f, data, cfg, shots=1)
        assert len(r["per_episode_acc"]) == 20
        print(f"{name:9s} 5-way 1-shot: {r['summary']}")

    try:
        fslab.train(data, "tfsl", cfg)
    except ValueError as e:
        assert "TFSL" in str(e)
    else:
        raise AssertionError("tfsl training should be rejected")
    try:
        fslab.Config({"ssl.nope": "1"})
    except ValueError:
        pass
    else:
        raise AssertionError("unknown key accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
