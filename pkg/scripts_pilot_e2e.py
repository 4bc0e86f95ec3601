"""Pilot of the toy end-to-end run (not part of the package)."""
import time

import numpy as np

from pse import dsp
from pse.audio_io import read_wav
from pse.bench import IdentityEnhancer, evaluate
from pse.container import save_embedding
from pse.metrics import toy_embed
from pse.mixer import CategoryDistribution, generate_dataset
from pse.model import Model, ModelConfig, build_model
from pse.training import TrainConfig, TrainExample, toy_train
from pse.cli import _load_examples

t_start = time.time()
SR = 16000
root = "/tmp/pilot"
from pse.toydata import build_toy_corpus
paths = build_toy_corpus(root + "/corpus", sr=SR, speakers=(0, 1), utts=6, utt_secs=7.0, seed=0)
print("corpus done", time.time() - t_start)

dist = CategoryDistribution()
man_train = generate_dataset(paths["targets"], paths["interferers"], paths["noise"],
                             0.45, dist, 1, root + "/train")
man_val = generate_dataset(paths["targets"], paths["interferers"], paths["noise"],
                           0.05, dist, 2, root + "/val")
ps_only = CategoryDistribution(weights=(0.0, 1.0, 0.0), draw_mode="uniform")
man_test = generate_dataset(paths["targets"], paths["interferers"], paths["noise"],
                            40 * 5 / 3600.0, ps_only, 3, root + "/test")
print("mix done", time.time() - t_start)

import os
emb_dir = root + "/emb"
os.makedirs(emb_dir, exist_ok=True)
for spk in ("s0", "s1"):
    emb = toy_embed(read_wav(f"{paths['enroll']}/{spk}.wav"))
    save_embedding(emb.values.astype(np.float32), f"{emb_dir}/{spk}.emb")
print("embed done", time.time() - t_start)

train_set = _load_examples(man_train, emb_dir, True)
val_set = _load_examples(man_val, emb_dir, True)
cfg = ModelConfig(dsp=dsp.DspConfig(sample_rate=SR), variant="unified",
                  conv_channels=16, erb_gru_hidden=64, df_gru_hidden=64, seed=0)
model = build_model(cfg)
tc = TrainConfig(max_epochs=8, seed=0)
best, history = toy_train(model, train_set, val_set, tc,
                          log=lambda m: print(m, flush=True))
print("train done", time.time() - t_start)
for rec in history:
    print(rec)
print("loss ratio final/initial:", history[-1].train_loss / history[0].train_loss)

trained = Model(cfg, best.astype(np.float32))
rep_model = evaluate(trained, man_test, emb_dir)
rep_raw = evaluate(IdentityEnhancer(), man_test, emb_dir)
mean_model = np.mean([r.si_sdr_db for r in rep_model.rows])
mean_raw = np.mean([r.si_sdr_db for r in rep_raw.rows])
print(f"ps SI-SDR: raw {mean_raw:.2f} dB -> enhanced {mean_model:.2f} dB")
stoi_model = np.mean([r.stoi for r in rep_model.rows])
stoi_raw = np.mean([r.stoi for r in rep_raw.rows])
print(f"ps STOI: raw {stoi_raw:.3f} -> enhanced {stoi_model:.3f}")
print("total time", time.time() - t_start)
