from pathlib import Path

from eimf.cli import main

TRAIN_TOML = """\
[train]
d = 8
d_t = 64
d_a = 8
n_interests = 2
max_interests = 5
batch_size = 32
max_steps = {steps}
eval_every = 10
seed = {seed}

[loss]
gamma = 0.1
"""


def run_mock_pipeline(root: Path, seed: int = 0, steps: int = 20) -> dict[str, Path]:
    """synth -> prepare -> embed -> cluster -> infer (mock) -> train -> eval."""
    root.mkdir(parents=True, exist_ok=True)
    syn, data = root / "syn", root / "data"
    (root / "train.toml").write_text(TRAIN_TOML.format(steps=steps, seed=seed))
    steps_argv = [
        ["synth", "--out", str(syn), "--seed", str(seed), "--users", "80", "--items", "40", "--topics", "4"],
        ["prepare", "--interactions", str(syn / "interactions.tsv"), "--catalog", str(syn / "catalog.jsonl"),
         "--seed", str(seed), "--out", str(data)],
        ["embed", "--dataset", str(data), "--d-t", "64", "--out", str(root / "emb")],
        ["cluster", "--embeddings", str(root / "emb"), "--preference", "-1", "--damping", "0.5",
         "--out", str(root / "clusters.json")],
        ["infer", "--dataset", str(data), "--clusters", str(root / "clusters.json"), "--mock",
         "--out", str(root / "interests.json")],
        ["train", "--config", str(root / "train.toml"), "--dataset", str(data), "--clusters", str(root / "clusters.json"),
         "--interests", str(root / "interests.json"), "--out", str(root / "ckpt")],
        ["eval", "--checkpoint", str(root / "ckpt"), "--dataset", str(data), "--split", "test", "--k", "20,50",
         "--out", str(root / "report.json")],
    ]
    for argv in steps_argv:
        code = main(argv)
        if code != 0:
            raise RuntimeError(f"eimf {' '.join(argv)} exited with {code}")
    return {
        "clusters.json": root / "clusters.json",
        "interests.json": root / "interests.json",
        "manifest.json": root / "ckpt" / "manifest.json",
        "params.bin": root / "ckpt" / "params.bin",
        "report.json": root / "report.json",
    }
