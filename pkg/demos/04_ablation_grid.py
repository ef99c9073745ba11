# %% [markdown]
# A reduced version of the four-way component ablation: no branches, MCC
# only, ICC only, and both. Each configuration shares data, seed and every
# other hyperparameter. The full-size grid is run by
# ``samdce ablate`` or the acceptance suite.

# %%
from samdce import RunConfig, SynthConfig, generate_dataset
from samdce.ablation import REFERENCE_DICE, run_ablation

data = generate_dataset(SynthConfig(image_size=32, num_classes=4), 160)
config = RunConfig(
    image_size=32, patch_size=4, d_model=32, d_ff=64, upscale=2, hyper_dim=8,
    num_classes=4, epochs=6, learning_rate=1e-3,
)

# %%
result = run_ablation(config, data[:120], data[120:], seeds=(0, 1),
                      progress=lambda c: print(f"{c.label:8s} seed {c.seed}: dice {c.mean_dice:.1f}"))

# %%
print(f"{'config':8s} {'dice':>6s} {'cos sim':>8s} {'full-scale ref':>15s}")
for row in result.rows():
    print(f"{row['config']:8s} {row['median_mean_dice']:6.1f} {row['median_token_similarity']:8.3f} "
          f"{row['reference_dice']:15.2f}")
