"""
Attention head and focal loss
=============================

Train the attention classifier on imbalanced feature vectors with plain
cross-entropy and with focal loss, and compare recall on the rare class.
"""
import numpy as np

from spinegrade.classifier import TrainConfig, attention_weights, init_attention, train
from spinegrade.evaluation import metrics_report

rng = np.random.default_rng(1)


def make(n):
    y = rng.choice(3, size=n, p=[0.705, 0.228, 0.067])
    X = rng.normal(size=(n, 12))
    X[np.arange(n), y] += 1.2
    return X, y


X, y = make(600)
Xv, yv = make(150)
Xt, yt = make(400)
print("training counts:", np.bincount(y))

for loss in ("CrossEntropy", "Focal"):
    cfg = TrainConfig(learning_rate=0.01, epochs=40, loss=loss, seed=0)
    bundle, history = train(X, y, Xv, yv, cfg)
    rep = metrics_report(bundle.probabilities(Xt), yt)
    print(f"{loss:>12}: accuracy {rep.accuracy:.3f}, rare-class recall {rep.recall[2]:.3f}, "
          f"final val loss {history[-1].val_loss:.4f}")

# attention over four feature segments for one sample
att = bundle.attention
print("token size", att.token_dim, "with", att.n_tokens, "tokens")
print(np.round(attention_weights(Xt[0], att)[0], 3))
print("untrained weights for comparison:")
print(np.round(attention_weights(Xt[0], init_attention(12, seed=0))[0], 3))
