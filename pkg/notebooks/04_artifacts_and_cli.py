# %% [markdown]
# # Checkpoints, dumps and the `vqc` command
#
# `vqc run` writes `report.csv` plus, for a single run, a checkpoint, the
# dataset, the test split and a raw dump of embeddings, tokens and
# assignments. All binary files start with the `VQC1` magic.

# %%
import tempfile
from pathlib import Path

from vqc import cli
from vqc.artifacts import load_checkpoint, load_dataset, load_dump
from vqc.codebook import perplexity
from vqc.experiments import read_report

out = Path(tempfile.mkdtemp())
conf = out / "quick.conf"
conf.write_text(
    "experiment.kind = single-run\n"
    "experiment.seeds = 0\n"
    "train.pretrain_epochs = 5\n"
    "train.epochs = 5\n"
)
cli.main(["run", str(conf), "--out", str(out / "run")])

# %%
row = read_report(out / "run/report.csv")[0]
print(row)
dump = load_dump(out / "run/dump.vqc")
print("perplexity from the raw dump:", perplexity(dump["assignment"].ravel(), len(dump["tokens"])))

# %%
model, meta = load_checkpoint(out / "run/checkpoint.vqc")
test = load_dataset(out / "run/test.vqc")
print(meta["train"]["codebook_size"], "tokens,", len(test), "test samples")
cli.main(["eval", str(out / "run/checkpoint.vqc"), str(out / "run/test.vqc")])
