"""
Building an architecture one action at a time
==============================================

An agent never writes network code.  It picks actions; each action appends
an NSC row (index, type, kernel, pred1, pred2) or moves one of two pointers
that choose predecessors for the next layer.  This script plays a fixed
action sequence by hand and looks at what comes out.
"""

import numpy as np

from metanas import Action, EnvironmentConfig, Mode, NasEnvironment, build_network, encode_state

# a multi-branch environment: 14 actions, pointer moves cost sigma * accuracy
config = EnvironmentConfig(env_id="omniglot", mode=Mode.MULTI_BRANCH, sigma=0.1, tau=20)
env = NasEnvironment(config)

# conv 3x3, then a 2x2 max pool; p1 follows the newest layer
plan = [Action.CONV3, Action.MAXPOOL2,
        # step p1 back to the conv and branch off it with a 5x5 conv
        Action.P1_DOWN, Action.CONV5,
        # p1 now sits on the new conv; move p2 up to the pool and add the two
        Action.P2_UP, Action.P2_UP, Action.ADD,
        Action.TERMINAL]

for action in plan:
    out = env.step(action)
    print(f"{action.label:>4} {out.event.value:<9} pointers={env.pointers}  reward={out.reward:.4f}")
    if out.done:
        print("episode over:", out.termination_reason.value)
        break

state = out.state
print("\nNSC rows:")
for row in state.as_lists():
    print("  ", row)

# shapes follow valid-padding rules: conv shrinks by k-1, pooling divides
graph = build_network(state, config)
print("\ngraph:")
for node in graph.nodes:
    print(f"  {node.id} <- {node.inputs}  {node.label}")

# the policy sees a fixed-size binary matrix, one one-hot row per layer slot
enc = encode_state(state, config)
print("\nencoding", enc.shape, "with", int(enc.sum()), "hot bits")
print("empty slots sit at the top:", np.all(enc[: config.d - len(state), 0] == 1))

# rewards are cached per (environment, architecture), so revisiting is free
print("\ndistinct architectures evaluated:", len(env.cache))
