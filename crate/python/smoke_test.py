"""Smoke test for the ngram_shap extension module.

Build and run from the repository root:

    cargo build --release -p ngram-shap-py --features extension-module
    cp target/release/libngram_shap_py.so python/ngram_shap.so
    python3 python/smoke_test.py
"""

import math
import os
import sys

HERE = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, HERE)

import ngram_shap  # noqa: E402

ASSETS = os.path.join(HERE, "..", "assets")


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    assert close(ngram_shap.ira_score([1, 1, 1, 2, 2], 5), 0.4, 1e-12)
    assert close(ngram_shap.ura_score([1, 1, 1, 2, 2], 5), 0.46, 1e-12)
    assert abs(ngram_shap.weight_capture_rate(1000, 1000) - 0.066) < 0.002
    curve = ngram_shap.weights_curve(10)
    assert len(curve) == 9 and close(curve[0][1], curve[-1][1], 1e-15)
    assert close(ngram_shap.kernel_weight(10, 1), curve[0][1], 0.0)

    merged = ngram_shap.dedup(
        [((0, 2), 0.5, [1], ["called", "the", "customer"]),
         ((2, 3), 1.2, [2], ["customer", "service"])],
        merge=True,
    )
    assert len(merged) == 1 and merged[0]["shap"] == 1.7, merged
    assert merged[0]["ngram"] == "called the customer service"

    # callables: a linear function has closed-form Shapley values
    coef = [1.5, -2.0, 0.5, 1.0]
    f = lambda x: sum(c * v for c, v in zip(coef, x))
    bg = [[0.1 * i, -0.2 * i, 0.3, float(i % 3)] for i in range(8)]
    x = [1.0, 2.0, -1.0, 0.5]
    means = [sum(r[j] for r in bg) / len(bg) for j in range(4)]
    exact = ngram_shap.exact_shap(f, x, bg)
    kernel = ngram_shap.kernel_shap(f, x, bg, budget=14, seed=3)
    for j in range(4):
        want = coef[j] * (x[j] - means[j])
        assert close(exact["values"][j], want), (j, exact)
        assert close(kernel["values"][j], want), (j, kernel)
    assert close(exact["base_value"] + sum(exact["values"]), exact["output"], 1e-8)

    nonlinear = lambda v: math.tanh(v[0] * v[1]) + max(v[2], v[3])
    a = ngram_shap.exact_shap(nonlinear, x, bg)
    b = ngram_shap.kernel_shap(nonlinear, x, bg, budget=14)
    assert all(close(p, q, 1e-8) for p, q in zip(a["values"], b["values"]))

    def broken(_):
        raise RuntimeError("boom")

    try:
        ngram_shap.exact_shap(broken, x, bg)
    except RuntimeError as e:
        assert "boom" in str(e)
    else:
        raise AssertionError("callable error was swallowed")

    try:
        ngram_shap.exact_shap(f, x, [])
    except ngram_shap.NgramShapError:
        pass
    else:
        raise AssertionError("empty background accepted")

    model = ngram_shap.Model.load(os.path.join(ASSETS, "desk_model.json"))
    assert model.filter_count == 12 and model.pad_len == 64
    logit, prob = model.predict("no problems great unit")
    assert prob > 0.5 and close(prob, 1 / (1 + math.exp(-logit)))
    with open(os.path.join(ASSETS, "corpus.tsv")) as fh:
        texts = [line.split("\t", 1)[1].strip() for line in fh][:300]
    rows = model.background(texts)
    assert len(rows) == 300 and len(rows[0]) == 12
    e = model.explain("no problems great unit", rows, seed=1)
    total = e["base_value"] + sum(a["shap"] for a in e["attributions"])
    assert close(total, e["logit"], 1e-8)
    assert any(a["ngram"] == "no problems" and a["shap"] > 0 for a in e["attributions"])
    assert e["deduped"] and e["merged"]
    sim = model.similarity()
    assert len(sim["pairs"]) == 66 and len(sim["bins"]) == 20

    report = ngram_shap.simulate(budgets=[100, 500], replications=3, seed=7)
    assert [b["budget"] for b in report["budgets"]] == [100, 500, 1022]
    assert report["budgets"][-1]["max_error"] <= 1e-8

    try:
        ngram_shap.Model.load("/nonexistent/model.json")
    except OSError:
        pass
    else:
        raise AssertionError("missing model accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
