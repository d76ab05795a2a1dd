"""Train a watermarked classifier on the synthetic task, then prove ownership
by revealing the seed, and again by revealing only a chain prefix."""

import chainmarks as cm

train, test = cm.make_blobs()
spec = cm.WatermarkSpec(
    seed=b"owner seed, keep offline",
    signature=cm.signature_from_owner("Example Owner"),
    C=10,
    L=100,
    shape=cm.InputShape.parse("3x16x16"),
)
# a 32-byte signature has 77 or 78 decimal digits, so L = 100 left-pads with zeros
print("signature digits adjusted:", spec.labels.adjustment)
print("labels 20..31:", spec.labels.digits[20:32])

model, report = cm.embed(spec, train, cm.TrainConfig(), test)
print(f"baseline test accuracy    {report.baseline_test_accuracy:.3f}")
print(f"watermarked test accuracy {report.test_accuracy:.3f} after {report.epochs_run} epochs")
print(f"watermark accuracy        {report.wm_accuracy:.3f} (baseline model: {report.baseline_wm_accuracy:.3f})")

# how often does the model land in each class on random inputs?
dist = cm.estimate_distribution(model, 10**6, rng_seed=1, budget=10**5, probe="bytes")
print("class distribution on random inputs:", [round(float(p), 4) for p in dist.probs])

decision = cm.decide_threshold(dist, spec.labels, 1e-7)
print(f"need {decision.m_min}/100 matches for p = 1e-7 (theta = {decision.theta:.2f})")

rep = cm.verify(model, spec.seed, spec.signature, 10, 100, spec.shape, decision)
print(f"seed disclosure: {rep.matches} matches -> {'accepted' if rep.accepted else 'rejected'}")

wrong = cm.verify(model, b"a guess", spec.signature, 10, 100, spec.shape, decision)
print(f"wrong seed:      {wrong.matches} matches -> {'accepted' if wrong.accepted else 'rejected'}")

# reveal only B_1..B_40; the threshold is recomputed for 40 positions
n = 40
prefix = cm.disclose_prefix(spec.chain(), n)
labels = cm.LabelSequence(10, spec.labels.digits[:n])
rep = cm.verify_disclosed(model, prefix, labels, dist, 1e-7)
print(f"prefix disclosure (n={n}): {rep.matches} matches, need {rep.m_min} -> "
      f"{'accepted' if rep.accepted else 'rejected'}")
