"""Train the full model on one synthetic dataset and score it.

Prints the start and end of the training trace and the effect-estimation
errors on each split.
"""

from hyperite import GeneratorConfig, TrainConfig, generate, train
from hyperite.evaluation import evaluate

ds = generate(GeneratorConfig(n=300, m=3, k=1.0, seed=0))
print(f"{ds.n} nodes, {ds.graph.num_edges} edges, {ds.t.mean():.0%} treated, true ATE {ds.ite.mean():.3f}")

cfg = TrainConfig(seed=0)
res = train(ds, cfg)
for row in res.trace[:3] + res.trace[-2:]:
    print("epoch {epoch:3d}  loss_y {loss_y:.4f}  loss_t {loss_t:.4f}  wass {wass:.4f}  val {val_mse:.4f}".format(**row))
print(f"best epoch {res.best_epoch} of {len(res.trace)}")

for rep in evaluate(res.best_params.state(), cfg, ds):
    print(f"{rep.split:<5}  pehe {rep.pehe:.4f}  ate error {rep.ate_error:.4f}  (n={rep.n})")
