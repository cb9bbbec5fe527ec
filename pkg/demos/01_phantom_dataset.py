"""Generate a small phantom dataset and look at what is in it.

Every slice comes with an exact lung mask and, for fibrotic slices, an exact
lesion mask -- the evaluation side of the pipeline never has to guess.
Writes demos/output/phantom_gallery.png.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from diffseg.phantom import LABEL_NEG, LABEL_POS, PhantomConfig, build_dataset, load_slice

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)
data_root = out_dir / "phantom_demo"

manifest = build_dataset(PhantomConfig(n_positive=20, n_negative=20, size=64, seed=11),
                         data_root)
print("counts:", manifest.counts)

pos = sorted(manifest.select(label=LABEL_POS), key=lambda e: e["severity"])
neg = manifest.select(label=LABEL_NEG)[:4]

fig, axes = plt.subplots(3, 4, figsize=(10, 7.5))
# top row: fibrotic slices from mild to severe
for ax, e in zip(axes[0], [pos[0], pos[6], pos[13], pos[-1]]):
    sl = load_slice(e, data_root, with_gt=True)
    ax.imshow(sl.pixels, cmap="gray", vmin=-1, vmax=1)
    ax.set_title(f"severity {e['severity']:.2f}", fontsize=9)
    ax.axis("off")
# middle row: their exact lesion masks
for ax, e in zip(axes[1], [pos[0], pos[6], pos[13], pos[-1]]):
    sl = load_slice(e, data_root, with_gt=True)
    ax.imshow(sl.gt_mask, cmap="gray")
    ax.set_title(f"lesion px {int(sl.gt_mask.sum())}", fontsize=9)
    ax.axis("off")
# bottom row: healthy slices
for ax, e in zip(axes[2], neg):
    sl = load_slice(e, data_root)
    ax.imshow(sl.pixels, cmap="gray", vmin=-1, vmax=1)
    ax.set_title("healthy", fontsize=9)
    ax.axis("off")
fig.suptitle("Phantom slices: fibrotic (top), their ground truth (middle), healthy (bottom)")
fig.tight_layout()
fig.savefig(out_dir / "phantom_gallery.png", dpi=110)
print("wrote", out_dir / "phantom_gallery.png")

# severity controls lesion load
sev = [e["severity"] for e in pos]
area = [int(load_slice(e, data_root, with_gt=True).gt_mask.sum()) for e in pos]
print(f"severity vs lesion area: r = {np.corrcoef(sev, area)[0, 1]:.3f}")
