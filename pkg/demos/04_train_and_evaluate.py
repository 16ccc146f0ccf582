# A short training run on synthetic data, then scoring.
# Run: python demos/04_train_and_evaluate.py   (about 20 seconds)

import numpy as np

from cdnode import labels, metrics, synth
from cdnode.net import init_network
from cdnode.ode import SolveConfig
from cdnode.training import TrainConfig, Utterance, predict, train
from cdnode.constraints import ConstraintConfig

spec = synth.SynthSpec(utterance_count=6, frames_per_utterance=800, feature_dim=8)
utts = synth.generate(spec)
fitted, _ = labels.fit_partition([labels.RaterMatrix(u.ratings) for u in utts])

# Labels lag the features by the annotation delay; shift them back.
data = []
for u, lab in zip(utts, fitted):
    X, L = metrics.delay_compensate(u.features, lab, 4.0)
    data.append(Utterance(u.id, X, L))
tr, dev = data[:3], data[3:]

cc = ConstraintConfig()
net = init_network(spec.feature_dim, 32, seed=0)
res = train(tr, net, cc, TrainConfig(epochs=20, lr_mu=0.003, lr_sigma=0.0003),
            on_epoch=lambda rec, _: print("epoch %(epoch)d loss %(loss).3f ccc_mu %(ccc_mu).3f" % rec))
print("best epoch", res.best_epoch)

sc = SolveConfig(method="dopri5")
preds = [predict(res.net, cc, u.features, sc) for u in dev]
rep = metrics.evaluate(preds, [u.targets for u in dev])
print("dev CCC mu %.3f  sd %.3f" % (rep.ccc_mu, rep.ccc_sigma))
print("RMSE of mu by sd decile:", np.round(rep.rmse_by_decile, 4))
P = np.concatenate(preds)
print("all predictions inside (0, p) x (0, q):",
      bool(np.all((P[:, 0] > 0) & (P[:, 0] < cc.p) & (P[:, 1] > 0) & (P[:, 1] < cc.q))))
