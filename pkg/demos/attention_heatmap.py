"""Drive the CLI end to end and render an attention heatmap.

Everything goes through lamil.cli.main(), the same entry point the
console script uses: synthesize a dataset, train a checkpoint, then dump
per-tile attention scores for one bag as CSV and SVG.  Outputs land in
demos/out/.

Run with:  python3 demos/attention_heatmap.py
"""

from pathlib import Path

from lamil.cli import main

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

data = out / "demo-data"
cfg = out / "run.cfg"
model = out / "model.lamp"
csv = out / "scores.csv"
svg = out / "scores.svg"

cfg.write_text("hidden_dim = 8\nheads = 2\nk = 8, 16\nepochs = 4\nlr = 1e-3\n")

steps = [
    ["synth", "--out", str(data), "--bags", "40", "--tiles", "30:50",
     "--dim", "16", "--targets", "2", "--effect", "3", "--radius", "2.5",
     "--seed", "11"],
    ["train", "--data", str(data / "manifest.txt"), "--config", str(cfg),
     "--out", str(model)],
    ["attend", "--model", str(model), "--bag", str(data / "bag0000.lamb"),
     "--out", str(csv), "--svg", str(svg)],
]
for argv in steps:
    print("$ lamil " + " ".join(argv))
    code = main(argv)
    assert code == 0, f"exit {code}"

lines = csv.read_text().splitlines()
print(f"\n{csv.name}: {len(lines) - 1} tiles")
for line in lines[:6]:
    print("  " + line)
print(f"\nheatmap written to {svg}")
