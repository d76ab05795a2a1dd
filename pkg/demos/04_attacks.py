"""Run the removal and ambiguity attacks against a watermarked model and
print the robustness table."""

import chainmarks as cm
from chainmarks.attacks import AttackConfig, default_battery, run_battery

train, test = cm.make_blobs()
spec = cm.WatermarkSpec(
    b"attack demo seed", cm.signature_from_owner("Example Owner"), 10, 100,
    cm.InputShape.parse("3x16x16"),
)
model, _ = cm.embed(spec, train, cm.TrainConfig(), test)
dist = cm.estimate_distribution(model, 10**6, rng_seed=2, budget=10**5, probe="bytes")
decision = cm.decide_threshold(dist, spec.labels, 0.01)

# the attacker holds 20% of the training data
attacker = train.subset(range(len(train) // 5))
configs = default_battery() + [AttackConfig("weight_pruning", {"rho": 0.9}, name="weight_pruning_90")]
matrix = run_battery(model, spec, decision, configs, attacker, test, rng_seed=0)
print(matrix.to_table())

forge = next(r for r in matrix.rows if r.kind == "ambiguity_forge")
print("\nforged trigger set:", forge.details)
