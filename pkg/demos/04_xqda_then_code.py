"""Learn an XQDA subspace first, then match inside it.

Run: python3 demos/04_xqda_then_code.py
"""
import numpy as np

from kxcrc import evaluation, subspace
from kxcrc.data import CrossViewDataset, SampleSet
from kxcrc.evaluation import MethodSpec, SplitSpec

# 10 identity directions buried under 50 nuisance directions (pose, light)
# that change freely between the two shots of a person.
rng = np.random.default_rng(2)
n, signal, nuisance = 200, 10, 50
identity = rng.normal(size=(n, signal))
mixing = np.linalg.qr(rng.normal(size=(signal + nuisance, signal + nuisance)))[0]


def shoot():
    feats = np.hstack([identity + 0.3 * rng.normal(size=(n, signal)),
                       3.0 * rng.normal(size=(n, nuisance))])
    return feats @ mixing.T  # hide the split between the two groups


ids = [f"p{i:03d}" for i in range(n)]
ds = CrossViewDataset(SampleSet(ids, ["a"] * n, shoot()), SampleSet(ids, ["b"] * n, shoot()))
train, test = evaluation.split(ds, SplitSpec(seed=1))

model = subspace.fit_xqda(train.view_b.features, train.view_a.features)
print(f"XQDA keeps {model.dim} of {signal + nuisance} directions; leading eigenvalues",
      np.round(model.eigenvalues[:5], 1).tolist())

for name, lam in (("cosine", 1.0), ("mahalanobis", 1.0), ("kissme", 1.0), ("kernel_xcrc", 1.5)):
    row = []
    for sub in (None, {}):
        method = MethodSpec(name, lam=lam, subspace=sub)
        row.append(100 * evaluation.evaluate_split(method, train, test)[2].rate(1))
    print(f"{name:<12} rank-1 raw {row[0]:5.1f}%   after XQDA {row[1]:5.1f}%")

# Models serialize to JSON with row-major arrays.
text = model.to_json()
back = subspace.SubspaceModel.from_json(text)
assert np.array_equal(back.projection, model.projection)
print(f"serialized subspace: {len(text)} bytes")
