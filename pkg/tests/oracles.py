"""Reference implementations used only by the tests."""
import copy

import numpy as np

from tdaf import ops

from conftest import grads


def manual_forward(body, x, stages_per_flow, attn_per_flow):
    """Re-derive the flow schedule from scratch with explicit per-flow modules.

    ``stages_per_flow[n-1]`` and ``attn_per_flow[n-1]`` are the stage and
    attention lists flow ``n`` uses; passing the same lists for every flow
    reproduces weight sharing, passing deep copies removes it.
    """
    plan = body.plan
    levels = [x]
    for _ in range(plan.num_flows - 1):
        levels.append(ops.avg_pool_2x2(levels[-1]))
    levels = levels[::-1]
    prev = []
    for n in range(1, plan.num_flows + 1):
        h = levels[n - 1]
        outs = []
        for l in range(1, plan.num_stages - (plan.num_flows - n) + 1):
            a = stages_per_flow[n - 1][l - 1](h, n - 1)
            if n > 1 and l <= len(prev):
                g = attn_per_flow[n - 1][l - 1](prev[l - 1], n - 2)
                h = ops.eltwise_mul_add(a, g, body.eta)
            else:
                h = a
            outs.append(h)
        prev = outs
    return h


def sharing_discrepancy(body, x, w) -> tuple[float, int]:
    """Max relative gap between shared-parameter grads and summed clone grads."""
    n_flows = body.plan.num_flows
    shared = dict(body.named_parameters())
    grads(lambda: ops.weighted_sum(body(x)[0], w), *shared.values())
    shared_grads = {k: p.grad.copy() for k, p in shared.items()}

    stage_clones = [copy.deepcopy(body.stages) for _ in range(n_flows)]
    att_clones = [None] + [copy.deepcopy(body.attentions) for _ in range(n_flows - 1)]
    params = [p for c in stage_clones for m in c for p in m.parameters()]
    params += [p for c in att_clones[1:] for m in c for p in m.parameters()]
    grads(lambda: ops.weighted_sum(manual_forward(body, x, stage_clones, att_clones), w), *params)

    worst, checked = 0.0, 0
    for name, g in shared_grads.items():
        kind, idx, rest = name.split(".", 2)
        owners = stage_clones if kind == "stages" else att_clones[1:]
        total = np.zeros_like(g)
        for owner in owners:
            p = dict(owner[int(idx)].named_parameters())[rest]
            if p.grad is not None:
                total += p.grad
        scale = max(np.abs(g).max(), np.abs(total).max(), 1e-300)
        worst = max(worst, float(np.abs(g - total).max() / scale))
        checked += 1
    return worst, checked
