"""Smoke test for the aikae_py bindings.

Build and install first:  pip install --no-build-isolation -e crates/py
Run:  python3 python/smoke_test.py
"""

import json
import math
import os
import random
import tempfile

import aikae_py as ak


def close(a, b, tol):
    return all(abs(x - y) <= tol for x, y in zip(a, b)) and len(a) == len(b)


def main():
    print("aikae_py", ak.__version__)

    # published sizes of the largest configurations
    assert ak.Model("ikae", 96).param_count == 108_736
    assert ak.Model("aikae", 96, p=32).param_count == 177_760

    m = ak.Model("aikae", 6, p=3, k=2, w=16, chi_hidden=[16], seed=1)
    assert (m.n, m.d, m.variant) == (6, 9, "aikae")
    rng = random.Random(0)
    x = [rng.gauss(0, 1) for _ in range(6)]
    z = m.encode(x)
    assert len(z) == 9
    assert close(m.decode(z), x, 1e-12), "decode(encode(x)) != x"
    # the augmentation never reaches the decoder
    assert close(m.decode(z[:6] + [5.0, -5.0, 5.0]), x, 1e-12)
    assert len(m.predict(x, 4)) == 4

    # K round trip and a forecast that matches predict
    k = m.koopman
    m.koopman = [[v * 0.5 for v in row] for row in k]
    assert close(m.koopman[0], [v * 0.5 for v in k[0]], 0.0)
    assert close(m.forecast(m.encode(x), [1])[0], m.predict(x, 1)[0], 1e-12)

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.json")
        m.save(path)
        back = ak.Model.load(path)
        assert back.predict(x, 3) == m.predict(x, 3)
        assert ak.Model.from_json(m.to_json()).koopman == m.koopman

    # IKAE with the exact-initial constraint has nothing left to fit
    ikae = ak.Model("ikae", 4, k=2, w=16, seed=2)
    obs = [(0, [0.1, 0.2, -0.3, 0.4]), (2, [0.0, 0.1, 0.2, 0.3])]
    r = ak.assimilate(ikae, obs, constraint="exact-initial")
    assert r["iterations"] == 0
    assert r["z0"] == ikae.encode(obs[0][1])

    # unconstrained assimilation lowers the cost
    x3 = [v + 0.1 for v in m.predict(x, 3)[2]]
    r = ak.assimilate(m, [(0, x), (3, x3)], lr=1e-3, steps=200)
    assert r["final_cost"] < r["cost_trajectory"][0]
    # started at the optimum, nothing moves
    r = ak.assimilate(m, [(0, x), (3, m.predict(x, 3)[2])])
    assert r["iterations"] == 0 and r["converged"]

    # data and training
    spec = {"system": "koopman_quadratic", "a": 0.9, "b": 0.5, "c": 1.0, "x0": [0.5, 0.5]}
    ds = ak.Dataset.synthetic(json.dumps(spec), 200)
    assert len(ds) == 200 and len(ds.columns) == 2
    assert sum(ds.splits) == 200
    model = ak.Model("aikae", 2, p=1, k=2, w=16, chi_hidden=[16], seed=3)
    rep = ak.train(model, ds, mode="states", epochs=3, batch_size=32, tau_max=4)
    assert len(rep["train_loss"]) == 3 and all(math.isfinite(v) for v in rep["train_loss"])
    masked = ds.mask_irregular(0.3, seed=1)
    assert masked.mask[0] and not all(masked.mask)

    # least squares recovers a planted transition matrix
    a = [[0.9, 0.1], [-0.2, 0.8]]
    gx = [[rng.gauss(0, 1) for _ in range(20)] for _ in range(2)]
    gy = [[sum(a[i][j] * gx[j][c] for j in range(2)) for c in range(20)] for i in range(2)]
    est = ak.lstsq_koopman(gx, gy)
    assert all(close(est[i], a[i], 1e-10) for i in range(2))
    assert ak.metrics([[1.0, 2.0]], [[1.0, 4.0]]) == (2.0, 1.0)

    for bad in (lambda: ak.Model("vae", 4), lambda: m.encode([1.0])):
        try:
            bad()
        except ValueError:
            pass
        else:
            raise AssertionError("expected ValueError")

    print("smoke test passed")


if __name__ == "__main__":
    main()
