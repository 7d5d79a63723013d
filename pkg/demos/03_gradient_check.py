"""Compare analytic gradients with central finite differences.

Run with ``python3 demos/03_gradient_check.py``.
"""

# %%
from scenelay.training import gradient_check

for encoder, mode in [("avg", "caption"), ("avg", "triplet"), ("bilstm", "caption"), ("bilstm", "caption+relation")]:
    rep = gradient_check(encoder, mode, seed=1)
    print(f"{encoder:7s} {mode:17s} max rel err {rep.max_rel_err:.2e} over {rep.n_checked} entries "
          f"(worst {rep.worst_param}) {'ok' if rep.passed else 'FAIL'}")

# %% Per-tensor view for the BiLSTM with trainable embeddings
rep = gradient_check("bilstm", "caption", seed=2, trainable_embeddings=True)
for name, err in sorted(rep.per_param.items()):
    print(f"{name:12s} {err:.2e}")
