"""
Does the agent build branches?
==============================

In multi-branch mode six of the fourteen actions (A8-A13) are merges and
pointer moves.  A pointer move earns only sigma times the current accuracy,
so sigma decides how much wandering around the graph costs.  Two runs, one
with free-ish pointer moves (sigma = 0.1) and one where they earn nothing
(sigma = 0), are compared by how often the final architecture of an episode
contains an Add or Concat chosen by the agent.  The automatic Concat that
joins dangling leaves does not count.
"""

import tempfile

from metanas import EnvironmentConfig, Mode, TrialConfig, action_proportions, count_multibranch, run_trial
from metanas.harness import top_architectures, write_reports

out = tempfile.mkdtemp(prefix="metanas-sigma-")

for sigma in (0.0, 0.1):
    # longer episodes than in chain mode: pointer moves eat into the budget
    env = EnvironmentConfig(mode=Mode.MULTI_BRANCH, sigma=sigma, tau=20)
    log = run_trial(TrialConfig(agent="meta_a2c", seed=0, env=env, stages=(("omniglot", 2000),))).log

    share = action_proportions(log, by_stage=False)["all"]
    mb = count_multibranch(log, window=50)
    print(f"\nsigma = {sigma}")
    print("  action shares:", " ".join(f"A{a}={p:.2f}" for a, p in enumerate(share)))
    print(f"  merges and pointer moves (A8-A13): {share[8:].sum():.3f}")
    print(f"  episodes ending multi-branch / chain: {mb['multibranch']} / {mb['chain']}")
    print("  multi-branch fraction per 50 episodes:",
          " ".join(f"{w.mean:.2f}" for w in mb["windows"]))

    # the same numbers as CSV, one row per window or action
    paths = write_reports(log, f"{out}/sigma-{sigma}", window=50)
    print("  wrote", ", ".join(p.name for p in paths), "under", out)

    # rows are "type,kernel,pred1,pred2"; types 5 and 6 are Add and Concat
    (rows, reward, step), = top_architectures(log, stage=0, n=1)
    print(f"  best on omniglot ({reward:.4f}, step {step}): {rows}")
