"""Classifier-guided latent editing: make a healthy slice look fibrotic.

Trains a small autoencoder and a linear classifier on latents, then pushes a
healthy slice's latent along the classifier gradient (z' = z + alpha * w_hat)
and decodes from the same inverted noise.  The image difference is exactly the
weak supervision signal the mask generator consumes.
Writes demos/output/latent_editing.png.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from diffseg.autoencoder import DiffAEConfig, encode_batch, train_diffae
from diffseg.classifier import ClassifierConfig, predict_score, train_classifier
from diffseg.manipulate import generate_pair
from diffseg.phantom import LABEL_NEG, LABEL_POS, PhantomConfig, build_dataset, load_slice

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)
data_root = out_dir / "editing_demo_data"

manifest = build_dataset(PhantomConfig(n_positive=40, n_negative=40, size=64, seed=21),
                         data_root)
ck = train_diffae(manifest, data_root,
                  DiffAEConfig(steps=1200, batch_size=8, val_every=300, seed=0))

entries = manifest.select(split="train") + manifest.select(split="val")
X = np.stack([load_slice(e, data_root).pixels for e in entries])
Z = encode_batch(X, ck)
labels = [1 if e["label"] == LABEL_POS else 0 for e in entries]
model = train_classifier(list(zip(Z, labels)), ClassifierConfig(seed=0))
print(f"classifier val F1: {model.f1:.3f}")

sl = load_slice(manifest.select(split="val", label=LABEL_NEG)[0], data_root)
alphas = [4.0, 8.0, 16.0]
fig, axes = plt.subplots(2, 1 + len(alphas), figsize=(11, 5.5))
axes[0, 0].imshow(sl.pixels, cmap="gray", vmin=-1, vmax=1)
axes[0, 0].set_title("healthy input", fontsize=9)
axes[1, 0].axis("off")
for col, alpha in enumerate(alphas, start=1):
    orig, fib = generate_pair(sl, alpha, ck, model)
    score = float(predict_score(encode_batch(np.clip(fib, -1, 1)[None], ck), model)[0])
    axes[0, col].imshow(fib, cmap="gray", vmin=-1, vmax=1)
    axes[0, col].set_title(f"alpha={alpha}  p={score:.2f}", fontsize=9)
    axes[1, col].imshow(np.abs(fib - orig), cmap="magma")
    axes[1, col].set_title("|edited - reconstruction|", fontsize=9)
for ax in axes.ravel():
    ax.axis("off")
fig.suptitle("Pushing a healthy latent toward the fibrotic side of the classifier")
fig.tight_layout()
fig.savefig(out_dir / "latent_editing.png", dpi=110)
print("wrote", out_dir / "latent_editing.png")
