"""Reference matcher for detection scoring: maximum bipartite matching via networkx."""

import random

import networkx as nx

from rangeforge.netrange import COVERTNESS, STEP_TAGS, AttackEvent, AttackStep, DeviceAlert


def brute_force_counts(alerts, schedule, slack):
    steps = [(a.attack_id, i, s) for a in schedule for i, s in enumerate(a.steps)]
    g = nx.Graph()
    left = [("alert", k) for k in range(len(alerts))]
    g.add_nodes_from(left, bipartite=0)
    g.add_nodes_from((("step", a, i) for a, i, _ in steps), bipartite=1)
    for k, al in enumerate(alerts):
        for a, i, s in steps:
            if al.claimed_type == s.tag and s.t0 - slack <= al.t_alert <= s.t1 + slack:
                g.add_edge(("alert", k), ("step", a, i))
    matching = nx.bipartite.hopcroft_karp_matching(g, top_nodes=left)
    tp = sum(1 for node in matching if node[0] == "alert")
    return {"tp": tp, "fp": len(alerts) - tp, "fn": len(steps) - tp}


def random_schedule_and_alerts(seed, n_steps=20, device="dev"):
    """Dense, overlapping windows so the matching problem is not trivial."""
    rnd = random.Random(seed)
    schedule, left = [], n_steps
    k = 0
    while left:
        n = min(left, rnd.randint(1, 5))
        t = rnd.uniform(0, 2000)
        steps = []
        for _ in range(n):
            t0 = t + rnd.uniform(0, 60)
            t1 = t0 + rnd.uniform(0, 200)
            steps.append(AttackStep(rnd.choice(STEP_TAGS[:3]), round(t0, 3), round(t1, 3)))
            t = t0
        schedule.append(AttackEvent(f"a{k}", tuple(steps), rnd.choice(COVERTNESS), rnd.random() < 0.5))
        left -= n
        k += 1
    alerts = [
        DeviceAlert(device, round(rnd.uniform(-100, 2500), 3), rnd.choice(STEP_TAGS[:3]))
        for _ in range(rnd.randint(0, 40))
    ]
    return schedule, alerts
