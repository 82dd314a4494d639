"""
Meta-training on a curriculum, then searching with a frozen policy
==================================================================

The recurrent A2C agent sees three environments in turn (omniglot,
vgg_flower, dtd), keeping its weights between them and zeroing its LSTM
memory at each switch.  Afterwards the weights are frozen and the policy is
dropped into two environments it never saw.  Random search with the same
budget is the yardstick.

Runs in a few seconds on one core.
"""

import tempfile
from pathlib import Path

import numpy as np

from metanas import TrialConfig, run_frozen_evaluation, run_trial
from metanas.harness import windowed

out = Path(tempfile.mkdtemp(prefix="metanas-demo-"))

meta = run_trial(TrialConfig(agent="meta_a2c", seed=0, out_dir=str(out / "meta")))
rand = run_trial(TrialConfig(agent="random", seed=0))

# best reward per episode, averaged over windows of 50 episodes
for name, result in (("meta_a2c", meta), ("random", rand)):
    print(f"\n{name}")
    for i, stage in enumerate(result.log.stages):
        eps = result.log.stage_episodes(i)
        means = [f"{w.mean:.3f}" + ("*" if w.partial else "") for w in windowed([e.best_reward for e in eps], 50)]
        print(f"  {stage.env_id:<11} {len(eps):>4} episodes  window means {' '.join(means)}")
print("(* marks a trailing window with fewer than 50 episodes)")

# meta-A2C settles on fewer, longer episodes; random search keeps terminating early
for name, result in (("meta_a2c", meta), ("random", rand)):
    lengths = [e.length for e in result.log.stage_episodes(2)]
    print(f"{name}: mean episode length on dtd {np.mean(lengths):.2f}")

# every distinct architecture was scored once; the caches hold the scores
print(f"\nestimator calls during meta-training: {meta.estimator_calls}")
print("caches:", sorted(p.name for p in (out / "meta" / "cache").iterdir()))

# frozen evaluation: same weights, no updates, fresh memory per environment
ev = run_frozen_evaluation(meta.checkpoint, ["aircraft", "cu_birds"], 200, seed=0)
base = run_trial(TrialConfig(agent="random", seed=0, stages=(("aircraft", 200), ("cu_birds", 200))))
print(f"\nweights untouched: {ev.digest_before == ev.digest_after}")
for i, env_id in enumerate(["aircraft", "cu_birds"]):
    frozen = np.mean([e.best_reward for e in ev.log.stage_episodes(i)])
    random_ = np.mean([e.best_reward for e in base.log.stage_episodes(i)])
    print(f"{env_id}: frozen policy {frozen:.3f} vs random {random_:.3f}")
    for rank, (rows, reward, step) in enumerate(ev.top[env_id], 1):
        print(f"   #{rank} {reward:.4f} at step {step}: {rows}")
