"""Dev probe: end-to-end training behavior on blobs and digits."""
import time

import numpy as np

from varibit import nn
from varibit.datasets import digits_dataset, generate_blobs
from varibit.train import TrainerConfig, baseline_config, evaluate, train


def blobs_run(seed=0):
    data = generate_blobs(classes=2, samples=500, separation=8.0, seed=11)
    train_set, val_set = data.split(400)
    arch = [nn.dense(2, 16), nn.relu(), nn.dense(16, 2)]
    cfg = TrainerConfig(epochs=5, batch_size=32, lr=0.05, seed=seed)
    t0 = time.time()
    res_q = train(cfg, train_set, arch)
    acc_q = evaluate(res_q.network, val_set)
    res_b = train(baseline_config(cfg), train_set, arch)
    acc_b = evaluate(res_b.network, val_set)
    print(f"blobs seed={seed}: quant={acc_q:.4f} base={acc_b:.4f} "
          f"delta={abs(acc_q - acc_b):.4f} time={time.time() - t0:.1f}s "
          f"loss[0]={res_q.metrics[0].loss:.3f} loss[-1]={res_q.metrics[-1].loss:.3f}")
    return acc_q, acc_b


def digits_run(seed=0, epochs=5):
    data = digits_dataset(samples=2400, seed=7)
    train_set, val_set = data.split(2000)
    arch = [nn.conv2d(1, 8, 3), nn.relu(), nn.maxpool(2), nn.flatten(),
            nn.dense(13 * 13 * 8, 32), nn.relu(), nn.dense(32, 10)]
    # dataset is (N, 28, 28); network wants (28, 28, 1)
    train_set.inputs = train_set.inputs.reshape(-1, 28, 28, 1)
    val_set.inputs = val_set.inputs.reshape(-1, 28, 28, 1)
    cfg = TrainerConfig(epochs=epochs, batch_size=32, lr=0.05, seed=seed)
    t0 = time.time()
    res_q = train(cfg, train_set, arch)
    tq = time.time() - t0
    acc_q = evaluate(res_q.network, val_set)
    t0 = time.time()
    res_b = train(baseline_config(cfg), train_set, arch)
    tb = time.time() - t0
    acc_b = evaluate(res_b.network, val_set)
    print(f"digits seed={seed}: quant={acc_q:.4f} ({tq:.1f}s) base={acc_b:.4f} "
          f"({tb:.1f}s) delta={abs(acc_q - acc_b):.4f}")

    # dynamic behavior
    events = res_q.metrics
    bpe = len(train_set) // cfg.batch_size
    switches = []
    prev = {}
    for ev in events:
        for lm in ev.layers:
            key = lm.name
            if key in prev and prev[key] != (lm.wl, lm.fl):
                switches.append((ev.batch, key, prev[key], (lm.wl, lm.fl)))
            prev[key] = (lm.wl, lm.fl)
    intra = [s for s in switches if s[0] % bpe != 0]
    print(f"  switches={len(switches)} intra-epoch={len(intra)} bpe={bpe}")
    # two layers with different WL simultaneously
    diff = any(len({lm.wl for lm in ev.layers}) >= 2 for ev in events)
    print(f"  >=2 distinct WL simultaneously: {diff}")
    # WL decreases after an increase
    fall_after_rise = False
    for name in {lm.name for lm in events[0].layers}:
        series = [lm.wl for ev in events for lm in ev.layers if lm.name == name]
        rose = False
        for a, b in zip(series, series[1:]):
            if b > a:
                rose = True
            if rose and b < a:
                fall_after_rise = True
        print(f"  {name}: wl series min={min(series)} max={max(series)} "
              f"uniq={sorted(set(series))}")
    print(f"  WL falls after a rise: {fall_after_rise}")
    strategies = {ev.strategy for ev in events}
    print(f"  strategies seen: {strategies}")
    lbs = sorted({lm.lb for ev in events for lm in ev.layers})
    res = sorted({lm.res for ev in events for lm in ev.layers})
    print(f"  lookbacks seen: {lbs}")
    print(f"  resolutions seen: {res[:5]}...{res[-5:] if len(res) > 5 else ''}")


if __name__ == "__main__":
    for s in (0, 1, 2):
        blobs_run(s)
    digits_run(0)
